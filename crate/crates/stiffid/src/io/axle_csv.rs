//! Per-axle slip/force exchange: CSV with header `alpha,fy`.

use super::{format_f64, IoError};
use crate::tirefit::{Axle, AxleData};
use std::path::Path;

pub fn axle_data_to_csv(data: &AxleData) -> String {
    let mut out = String::with_capacity(data.alpha.len() * 52 + 16);
    out.push_str("alpha,fy\n");
    for (a, f) in data.alpha.iter().zip(&data.f_y) {
        out.push_str(&format_f64(*a));
        out.push(',');
        out.push_str(&format_f64(*f));
        out.push('\n');
    }
    out
}

pub fn write_axle_csv(path: &Path, data: &AxleData) -> Result<(), IoError> {
    std::fs::write(path, axle_data_to_csv(data))
        .map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

pub fn parse_axle_csv(bytes: &[u8], file: &str, axle: Axle) -> Result<AxleData, IoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IoError::Parse {
        file: file.to_string(),
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.split(',').map(str::trim).collect::<Vec<_>>() == ["alpha", "fy"] => {}
        Some(h) => {
            return Err(IoError::Parse {
                file: file.to_string(),
                line: 1,
                message: format!("expected header `alpha,fy`, got `{h}`"),
            })
        }
        None => {
            return Err(IoError::Parse {
                file: file.to_string(),
                line: 0,
                message: "empty file".to_string(),
            })
        }
    }
    let mut alpha = Vec::new();
    let mut f_y = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 2 {
            return Err(IoError::Parse {
                file: file.to_string(),
                line: lineno + 2,
                message: format!("expected 2 cells, got {}", cells.len()),
            });
        }
        let mut parsed = [0.0f64; 2];
        for (k, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| IoError::Parse {
                file: file.to_string(),
                line: lineno + 2,
                message: format!("not a number: `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(IoError::Parse {
                    file: file.to_string(),
                    line: lineno + 2,
                    message: format!("non-finite value `{cell}`"),
                });
            }
            parsed[k] = v;
        }
        alpha.push(parsed[0]);
        f_y.push(parsed[1]);
    }
    Ok(AxleData { alpha, f_y, axle })
}

pub fn read_axle_csv(path: &Path, axle: Axle) -> Result<AxleData, IoError> {
    let bytes = std::fs::read(path)
        .map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    parse_axle_csv(&bytes, &path.display().to_string(), axle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let data = AxleData {
            alpha: vec![-0.1, 0.0, 0.1],
            f_y: vec![-0.45, 0.0, 0.45],
            axle: Axle::Front,
        };
        let csv = axle_data_to_csv(&data);
        let back = parse_axle_csv(csv.as_bytes(), "mem", Axle::Front).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn rejects_bad_header_and_cells() {
        assert!(parse_axle_csv(b"alpha\n", "m", Axle::Rear).is_err());
        assert!(parse_axle_csv(b"alpha,fy\n1\n", "m", Axle::Rear).is_err());
        assert!(parse_axle_csv(b"alpha,fy\n1,nan\n", "m", Axle::Rear).is_err());
        let err = parse_axle_csv(b"alpha,fy\n0.1,2\nx,3\n", "ax.csv", Axle::Rear).unwrap_err();
        assert_eq!(err.to_string(), "ax.csv:3: not a number: `x`");
    }
}
