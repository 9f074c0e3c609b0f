use crate::tensor::Tensor;

use super::MadError;

/// Toy single-image detector score: mean absolute difference between each
/// interior pixel and the median of its 3×3 neighbourhood, over all
/// channels.
pub fn median_residual_score(image: &Tensor) -> Result<f64, MadError> {
    let &[c, h, w] = image.shape() else {
        return Err(MadError::ImageShape(image.shape().to_vec()));
    };
    if h < 3 || w < 3 {
        return Err(MadError::ImageShape(image.shape().to_vec()));
    }
    let d = image.data();
    let mut total = 0.0;
    let mut window = [0.0; 9];
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut k = 0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        window[k] = plane[(y + dy - 1) * w + x + dx - 1];
                        k += 1;
                    }
                }
                window.sort_by(f64::total_cmp);
                total += (plane[y * w + x] - window[4]).abs();
            }
        }
    }
    Ok(total / (c * (h - 2) * (w - 2)) as f64)
}
