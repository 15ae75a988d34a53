use crate::error::{Error, Result};

/// Cosine decay from `lr0` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f32) -> Result<f32> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::invalid(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    let t = step as f64 / total_steps as f64;
    Ok((0.5 * lr0 as f64 * (1.0 + (std::f64::consts::PI * t).cos())) as f32)
}
