//! ASCII portable graymap ("P2") images.

use mvh_core::tensor::Tensor;

use crate::error::{AppError, AppResult};

pub const MAXVAL: u32 = 255;

/// Grey levels in [0, 1], row-major, quantised to 0..=255. `seed` becomes a comment line.
pub fn encode(width: usize, height: usize, values: &[f64], seed: u64) -> AppResult<String> {
    if values.len() != width * height || width == 0 {
        return Err(AppError::Invalid(format!(
            "pgm: {} values for a {width}x{height} image",
            values.len()
        )));
    }
    let mut out = format!("P2\n# seed {seed}\n{width} {height}\n{MAXVAL}\n");
    for row in values.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| ((v.clamp(0.0, 1.0) * MAXVAL as f64).round() as u32).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Parsed image: width, height and grey levels divided by the maxval.
#[derive(Debug, Clone, PartialEq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Graymap {
    /// As a `[1, height, width]` tensor.
    pub fn into_tensor(self) -> AppResult<Tensor> {
        Ok(Tensor::new(&[1, self.height, self.width], self.values)?)
    }
}

pub fn decode(text: &str) -> AppResult<Graymap> {
    let bad = |m: &str| AppError::Invalid(format!("pgm: {m}"));
    let mut toks = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if toks.next() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut header = [0usize; 3];
    for h in &mut header {
        *h = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("malformed header"))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("invalid dimensions or maxval"));
    }
    let values = toks
        .map(|t| match t.parse::<usize>() {
            Ok(v) if v <= maxval => Ok(v as f64 / maxval as f64),
            _ => Err(bad(&format!("bad pixel {t:?}"))),
        })
        .collect::<AppResult<Vec<f64>>>()?;
    if values.len() != width * height {
        return Err(bad(&format!("expected {} pixels, found {}", width * height, values.len())));
    }
    Ok(Graymap { width, height, values })
}
