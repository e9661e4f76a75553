//! Per-pixel two-component Laplace mixture over disparity and its hard
//! mode-selection decoding.

use thiserror::Error;

use crate::grid::DepthGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BimodalError {
    #[error("invalid mixture parameters at pixel ({x}, {y}): {reason}")]
    InvalidPixel {
        x: usize,
        y: usize,
        reason: &'static str,
    },
    #[error("invalid mixture parameters: {0}")]
    InvalidParams(&'static str),
    #[error("expected {expected} parameter sets for a {width}x{height} field, got {actual}")]
    LengthMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
}

/// Mixture weight, locations, and diversities of the two Laplace modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BimodalParams {
    pi: f32,
    mu1: f32,
    b1: f32,
    mu2: f32,
    b2: f32,
}

impl BimodalParams {
    pub fn new(pi: f32, mu1: f32, b1: f32, mu2: f32, b2: f32) -> Result<Self, BimodalError> {
        let p = BimodalParams {
            pi,
            mu1,
            b1,
            mu2,
            b2,
        };
        match p.problem() {
            Some(reason) => Err(BimodalError::InvalidParams(reason)),
            None => Ok(p),
        }
    }

    pub fn from_array(v: [f32; 5]) -> Result<Self, BimodalError> {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    fn problem(&self) -> Option<&'static str> {
        let all = [self.pi, self.mu1, self.b1, self.mu2, self.b2];
        if all.iter().any(|v| !v.is_finite()) {
            Some("non-finite parameter")
        } else if !(0.0..=1.0).contains(&self.pi) {
            Some("mixture weight outside [0, 1]")
        } else if self.b1 <= 0.0 || self.b2 <= 0.0 {
            Some("non-positive diversity")
        } else {
            None
        }
    }

    pub fn pi(&self) -> f32 {
        self.pi
    }

    pub fn mu1(&self) -> f32 {
        self.mu1
    }

    pub fn b1(&self) -> f32 {
        self.b1
    }

    pub fn mu2(&self) -> f32 {
        self.mu2
    }

    pub fn b2(&self) -> f32 {
        self.b2
    }

    pub fn to_array(&self) -> [f32; 5] {
        [self.pi, self.mu1, self.b1, self.mu2, self.b2]
    }

    /// Mixture density at disparity `d`.
    pub fn density(&self, d: f64) -> f64 {
        let pi = self.pi as f64;
        let (mu1, b1) = (self.mu1 as f64, self.b1 as f64);
        let (mu2, b2) = (self.mu2 as f64, self.b2 as f64);
        pi / (2.0 * b1) * (-(d - mu1).abs() / b1).exp()
            + (1.0 - pi) / (2.0 * b2) * (-(d - mu2).abs() / b2).exp()
    }

    /// The mode location with the higher mixture density; ties go to `mu1`.
    pub fn decode(&self) -> f32 {
        if self.density(self.mu2 as f64) > self.density(self.mu1 as f64) {
            self.mu2
        } else {
            self.mu1
        }
    }
}

/// Validated H×W field of mixture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BimodalField {
    width: usize,
    height: usize,
    params: Vec<BimodalParams>,
}

impl BimodalField {
    /// Builds a field from raw 5-tuples, rejecting the first invalid pixel.
    pub fn from_raw(
        width: usize,
        height: usize,
        raw: &[[f32; 5]],
    ) -> Result<Self, BimodalError> {
        let expected = width * height;
        if width == 0 || height == 0 || raw.len() != expected {
            return Err(BimodalError::LengthMismatch {
                width,
                height,
                expected,
                actual: raw.len(),
            });
        }
        let params = raw
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let p = BimodalParams {
                    pi: v[0],
                    mu1: v[1],
                    b1: v[2],
                    mu2: v[3],
                    b2: v[4],
                };
                match p.problem() {
                    Some(reason) => Err(BimodalError::InvalidPixel {
                        x: i % width,
                        y: i / width,
                        reason,
                    }),
                    None => Ok(p),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BimodalField {
            width,
            height,
            params,
        })
    }

    pub fn new(
        width: usize,
        height: usize,
        params: Vec<BimodalParams>,
    ) -> Result<Self, BimodalError> {
        if width == 0 || height == 0 || params.len() != width * height {
            return Err(BimodalError::LengthMismatch {
                width,
                height,
                expected: width * height,
                actual: params.len(),
            });
        }
        Ok(BimodalField {
            width,
            height,
            params,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn params(&self) -> &[BimodalParams] {
        &self.params
    }

    pub fn get(&self, x: usize, y: usize) -> &BimodalParams {
        &self.params[y * self.width + x]
    }
}

/// Decodes every pixel to its selected mode. Parameters were validated on construction.
pub fn decode_field(field: &BimodalField) -> DepthGrid {
    let values = field.params.iter().map(BimodalParams::decode).collect();
    DepthGrid::new(field.width, field.height, values)
        .expect("decoded modes are finite by construction")
}
