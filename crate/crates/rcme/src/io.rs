//! Correspondence file format: a plain UTF-8 text format trivially
//! producible by any feature-matching pipeline.
//!
//! ```text
//! # comment
//! K 500 500 320 240 0
//! sigma 0.5
//! 12.5 40.25 13.75 41.0
//! ...
//! ```
//!
//! One `K fx fy cx cy skew` header line is required; `sigma <value>` is
//! optional and defaults to 0.5 when absent. Each remaining line holds one
//! correspondence `x y xp yp` in pixels. `#` starts a comment anywhere on a
//! line. Values are written with shortest-round-trip precision, so an
//! emit/load cycle reproduces the doubles exactly.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::scalar::{cast, Scalar};
use crate::types::{Correspondence, Intrinsics, NoiseModel};

pub const DEFAULT_SIGMA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("missing 'K fx fy cx cy skew' header line")]
    MissingHeader,
    #[error("need at least 8 correspondences, got {0}")]
    TooFewCorrespondences(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorrespondences<T: Scalar> {
    pub correspondences: Vec<Correspondence<T>>,
    pub intrinsics: Intrinsics<T>,
    pub noise: NoiseModel<T>,
    /// `true` when no `sigma` header was present and the 0.5 px default was
    /// applied (callers may want to surface a note).
    pub sigma_defaulted: bool,
}

fn malformed(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Malformed {
        line,
        msg: msg.into(),
    }
}

fn parse_number<T: Scalar>(tok: &str, line: usize, what: &str) -> Result<T, IoError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| malformed(line, format!("non-numeric {what}: '{tok}'")))?;
    if !v.is_finite() {
        return Err(malformed(line, format!("non-finite {what}: '{tok}'")));
    }
    Ok(cast(v))
}

/// Parses the file format from a string; line numbers in errors are
/// 1-based.
pub fn parse_correspondences<T: Scalar>(text: &str) -> Result<LoadedCorrespondences<T>, IoError> {
    let mut intrinsics: Option<Intrinsics<T>> = None;
    let mut sigma: Option<T> = None;
    let mut correspondences = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match tokens[0] {
            "K" => {
                if tokens.len() != 6 {
                    return Err(malformed(
                        line_no,
                        format!("expected 'K fx fy cx cy skew', got {} fields", tokens.len()),
                    ));
                }
                let fx = parse_number::<T>(tokens[1], line_no, "fx")?;
                let fy = parse_number::<T>(tokens[2], line_no, "fy")?;
                let cx = parse_number::<T>(tokens[3], line_no, "cx")?;
                let cy = parse_number::<T>(tokens[4], line_no, "cy")?;
                let skew = parse_number::<T>(tokens[5], line_no, "skew")?;
                intrinsics = Some(
                    Intrinsics::new(fx, fy, cx, cy, skew)
                        .map_err(|e| malformed(line_no, e.to_string()))?,
                );
            }
            "sigma" => {
                if tokens.len() != 2 {
                    return Err(malformed(line_no, "expected 'sigma <value>'"));
                }
                let s = parse_number::<T>(tokens[1], line_no, "sigma")?;
                if s <= T::zero() {
                    return Err(malformed(line_no, "sigma must be positive"));
                }
                sigma = Some(s);
            }
            _ => {
                if tokens.len() != 4 {
                    return Err(malformed(
                        line_no,
                        format!("expected 'x y xp yp', got {} fields", tokens.len()),
                    ));
                }
                let x = parse_number::<T>(tokens[0], line_no, "x")?;
                let y = parse_number::<T>(tokens[1], line_no, "y")?;
                let xp = parse_number::<T>(tokens[2], line_no, "xp")?;
                let yp = parse_number::<T>(tokens[3], line_no, "yp")?;
                correspondences.push(
                    Correspondence::try_new(
                        nalgebra::Vector2::new(x, y),
                        nalgebra::Vector2::new(xp, yp),
                    )
                    .map_err(|e| malformed(line_no, e.to_string()))?,
                );
            }
        }
    }

    let intrinsics = intrinsics.ok_or(IoError::MissingHeader)?;
    if correspondences.len() < 8 {
        return Err(IoError::TooFewCorrespondences(correspondences.len()));
    }
    let sigma_defaulted = sigma.is_none();
    let noise = NoiseModel::new(sigma.unwrap_or_else(|| cast(DEFAULT_SIGMA)))
        .expect("validated sigma");
    Ok(LoadedCorrespondences {
        correspondences,
        intrinsics,
        noise,
        sigma_defaulted,
    })
}

/// Loads a correspondence file from disk.
pub fn load_correspondences<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<LoadedCorrespondences<T>, IoError> {
    let text = std::fs::read_to_string(path)?;
    parse_correspondences(&text)
}

fn fmt<T: Scalar>(v: T) -> String {
    format!("{}", v.to_subset().unwrap_or(f64::NAN))
}

/// Renders correspondences in the file format. `sigma = None` omits the
/// noise header (loaders then apply the 0.5 px default).
pub fn format_correspondences<T: Scalar>(
    correspondences: &[Correspondence<T>],
    intrinsics: &Intrinsics<T>,
    sigma: Option<T>,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "K {} {} {} {} {}\n",
        fmt(intrinsics.fx),
        fmt(intrinsics.fy),
        fmt(intrinsics.cx),
        fmt(intrinsics.cy),
        fmt(intrinsics.skew),
    ));
    if let Some(s) = sigma {
        out.push_str(&format!("sigma {}\n", fmt(s)));
    }
    for c in correspondences {
        out.push_str(&format!(
            "{} {} {} {}\n",
            fmt(c.x.x),
            fmt(c.x.y),
            fmt(c.xp.x),
            fmt(c.xp.y),
        ));
    }
    out
}

/// Writes correspondences to a file in the text format.
pub fn write_correspondences<T: Scalar>(
    path: impl AsRef<Path>,
    correspondences: &[Correspondence<T>],
    intrinsics: &Intrinsics<T>,
    sigma: Option<T>,
) -> Result<(), IoError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(format_correspondences(correspondences, intrinsics, sigma).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SceneConfig};

    #[test]
    fn round_trip_is_exact() {
        let mut config = SceneConfig::<f64>::canonical();
        config.n_points = 25;
        config.rng_seed = 3;
        let scene = generate(&config).unwrap();
        let text =
            format_correspondences(&scene.correspondences, &config.intrinsics, Some(0.5));
        let loaded: LoadedCorrespondences<f64> = parse_correspondences(&text).unwrap();
        assert_eq!(loaded.correspondences, scene.correspondences);
        assert_eq!(loaded.intrinsics, config.intrinsics);
        assert_eq!(loaded.noise.sigma, 0.5);
        assert!(!loaded.sigma_defaulted);
    }

    #[test]
    fn sigma_defaults_to_half_pixel() {
        let text = "K 500 500 320 240 0\n0 0 1 1\n0 1 1 2\n1 0 2 1\n2 2 3 3\n3 1 4 2\n1 3 2 4\n4 4 5 5\n5 2 6 3\n";
        let loaded: LoadedCorrespondences<f64> = parse_correspondences(text).unwrap();
        assert_eq!(loaded.noise.sigma, DEFAULT_SIGMA);
        assert!(loaded.sigma_defaulted);
    }

    #[test]
    fn too_few_pairs_is_rejected_with_count() {
        let text = "K 500 500 320 240 0\n0 0 1 1\n0 1 1 2\n1 0 2 1\n2 2 3 3\n3 1 4 2\n1 3 2 4\n4 4 5 5\n";
        match parse_correspondences::<f64>(text) {
            Err(IoError::TooFewCorrespondences(7)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let text = "K 500 500 320 240 0\n1 2 3\n";
        match parse_correspondences::<f64>(text) {
            Err(IoError::Malformed { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let text = "K 500 500 320 240 0\n1 2 3 banana\n";
        match parse_correspondences::<f64>(text) {
            Err(IoError::Malformed { line: 2, msg }) => assert!(msg.contains("banana")),
            other => panic!("unexpected {other:?}"),
        }
        let text = "K 500 500 320\n";
        match parse_correspondences::<f64>(text) {
            Err(IoError::Malformed { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_rejected() {
        let text = "1 2 3 4\n";
        assert!(matches!(
            parse_correspondences::<f64>(text),
            Err(IoError::MissingHeader)
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let mut text = String::from("# leading comment\n\nK 500 500 320 240 0  # the camera\nsigma 0.25\n");
        for i in 0..8 {
            text.push_str(&format!("{i} {i} {i} {i} # pt\n"));
        }
        let loaded = parse_correspondences::<f64>(&text).unwrap();
        assert_eq!(loaded.correspondences.len(), 8);
        assert_eq!(loaded.noise.sigma, 0.25);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("rcme-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pairs.txt");
        let mut config = SceneConfig::<f64>::canonical();
        config.n_points = 12;
        let scene = generate(&config).unwrap();
        write_correspondences(&path, &scene.correspondences, &config.intrinsics, None).unwrap();
        let loaded: LoadedCorrespondences<f64> = load_correspondences(&path).unwrap();
        assert_eq!(loaded.correspondences, scene.correspondences);
        assert!(loaded.sigma_defaulted);
        std::fs::remove_file(&path).ok();
    }
}
