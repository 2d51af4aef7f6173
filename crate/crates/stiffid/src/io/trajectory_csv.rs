//! Trajectory CSV: header `t,vx,vy,r,ay,rdot,vydot,delta1,delta2`, SI units
//! and radians. Measured files may omit the derived columns (`vy`, `rdot`,
//! `vydot`), and `ay` when only simulator state is stored; `t`, `vx`, `r`,
//! `delta1`, `delta2` are required.

use super::{format_f64, IoError};
use crate::dynamics::Trajectory;
use std::path::Path;

const COLUMNS: [&str; 9] = ["t", "vx", "vy", "r", "ay", "rdot", "vydot", "delta1", "delta2"];
const REQUIRED: [&str; 5] = ["t", "vx", "r", "delta1", "delta2"];

/// Serializes with the full canonical header; absent derived signals write
/// empty cells.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let n = traj.len();
    let mut out = String::with_capacity(n * 9 * 26 + 64);
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    let cell = |series: &Option<Vec<f64>>, i: usize| -> String {
        series.as_ref().map_or_else(String::new, |s| format_f64(s[i]))
    };
    for i in 0..n {
        let row = [
            format_f64(traj.t[i]),
            format_f64(traj.vx[i]),
            cell(&traj.vy, i),
            format_f64(traj.r[i]),
            cell(&traj.ay, i),
            cell(&traj.r_dot, i),
            cell(&traj.vy_dot, i),
            format_f64(traj.delta1[i]),
            format_f64(traj.delta2[i]),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    std::fs::write(path, trajectory_to_csv(traj))
        .map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

/// Parses CSV bytes into a trajectory. `file` labels error messages.
///
/// Columns may appear in any order; unknown or duplicate names are rejected.
/// Every present cell must be a finite float, except that a column which is
/// empty on every row is treated as absent. The time axis must be uniform.
pub fn parse_trajectory_csv(bytes: &[u8], file: &str) -> Result<Trajectory, IoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IoError::Parse {
        file: file.to_string(),
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IoError::Parse {
        file: file.to_string(),
        line: 0,
        message: "empty file".to_string(),
    })?;

    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut col_of: [Option<usize>; 9] = [None; 9];
    for (pos, name) in names.iter().enumerate() {
        let idx = COLUMNS.iter().position(|c| c == name).ok_or_else(|| IoError::Parse {
            file: file.to_string(),
            line: 1,
            message: format!("unknown column `{name}`"),
        })?;
        if col_of[idx].is_some() {
            return Err(IoError::Parse {
                file: file.to_string(),
                line: 1,
                message: format!("duplicate column `{name}`"),
            });
        }
        col_of[idx] = Some(pos);
    }
    for req in REQUIRED {
        let idx = COLUMNS.iter().position(|c| *c == req).unwrap();
        if col_of[idx].is_none() {
            return Err(IoError::Parse {
                file: file.to_string(),
                line: 1,
                message: format!("missing required column `{req}`"),
            });
        }
    }

    let width = names.len();
    // Per known column: collected values and whether any non-empty cell
    // appeared (all-empty optional columns degrade to absent).
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); 9];
    let mut nonempty = [false; 9];
    let mut n = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != width {
            return Err(IoError::Parse {
                file: file.to_string(),
                line: lineno + 2,
                message: format!("expected {width} cells, got {}", cells.len()),
            });
        }
        for (idx, col) in col_of.iter().enumerate() {
            let Some(pos) = col else { continue };
            let cell = cells[*pos];
            if cell.is_empty() {
                series[idx].push(f64::NAN);
            } else {
                let v: f64 = cell.parse().map_err(|_| IoError::Parse {
                    file: file.to_string(),
                    line: lineno + 2,
                    message: format!("column `{}`: not a number: `{cell}`", COLUMNS[idx]),
                })?;
                if !v.is_finite() {
                    return Err(IoError::Parse {
                        file: file.to_string(),
                        line: lineno + 2,
                        message: format!("column `{}`: non-finite value `{cell}`", COLUMNS[idx]),
                    });
                }
                series[idx].push(v);
                nonempty[idx] = true;
            }
        }
        n += 1;
    }
    if n < 2 {
        return Err(IoError::Parse {
            file: file.to_string(),
            line: 0,
            message: format!("need at least 2 data rows, got {n}"),
        });
    }

    // Required columns and any partially filled optional column must be
    // complete (no empty cells).
    for idx in 0..9 {
        if col_of[idx].is_none() {
            continue;
        }
        let required = REQUIRED.contains(&COLUMNS[idx]);
        let holes = series[idx].iter().filter(|v| v.is_nan()).count();
        if (required || nonempty[idx]) && holes > 0 {
            let first_hole =
                series[idx].iter().position(|v| v.is_nan()).unwrap_or(0);
            return Err(IoError::Parse {
                file: file.to_string(),
                line: first_hole + 2,
                message: format!("column `{}` has an empty cell", COLUMNS[idx]),
            });
        }
    }

    let take = |name: &str, series: &mut Vec<Vec<f64>>| -> Vec<f64> {
        let idx = COLUMNS.iter().position(|c| c == &name).unwrap();
        std::mem::take(&mut series[idx])
    };
    let take_opt = |name: &str, series: &mut Vec<Vec<f64>>, nonempty: &[bool; 9]| -> Option<Vec<f64>> {
        let idx = COLUMNS.iter().position(|c| c == &name).unwrap();
        if col_of[idx].is_some() && nonempty[idx] {
            Some(std::mem::take(&mut series[idx]))
        } else {
            None
        }
    };

    let t = take("t", &mut series);
    let dt = t[1] - t[0];
    let traj = Trajectory {
        dt,
        t,
        vx: take("vx", &mut series),
        r: take("r", &mut series),
        delta1: take("delta1", &mut series),
        delta2: take("delta2", &mut series),
        vy: take_opt("vy", &mut series, &nonempty),
        ay: take_opt("ay", &mut series, &nonempty),
        r_dot: take_opt("rdot", &mut series, &nonempty),
        vy_dot: take_opt("vydot", &mut series, &nonempty),
    };
    traj.validate().map_err(|e| IoError::Parse {
        file: file.to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(traj)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let bytes = std::fs::read(path)
        .map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    parse_trajectory_csv(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, SteerSchedule, VehicleParams};

    fn example() -> Trajectory {
        let s = SteerSchedule::default_sine();
        simulate(
            &VehicleParams::scaled_test_vehicle(),
            8.14,
            9.71,
            |t| s.eval(t),
            1.2,
            0.01,
            1.0,
            [0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_bits() {
        let traj = example();
        let csv = trajectory_to_csv(&traj);
        assert!(csv.starts_with("t,vx,vy,r,ay,rdot,vydot,delta1,delta2\n"));
        let back = parse_trajectory_csv(csv.as_bytes(), "mem").unwrap();
        assert_eq!(traj.t, back.t);
        assert_eq!(traj.r, back.r);
        assert_eq!(traj.vy, back.vy);
        assert_eq!(traj.ay, back.ay);
        assert_eq!(traj.r_dot, back.r_dot);
        assert_eq!(traj.vy_dot, back.vy_dot);
    }

    #[test]
    fn measured_file_without_derived_columns() {
        let csv = "t,vx,r,ay,delta1,delta2\n0,1.2,0.0,0.1,0.05,0\n0.01,1.2,0.001,0.11,0.05,0\n0.02,1.2,0.002,0.12,0.05,0\n";
        let traj = parse_trajectory_csv(csv.as_bytes(), "mem").unwrap();
        assert_eq!(traj.len(), 3);
        assert!(traj.vy.is_none());
        assert!(traj.r_dot.is_none());
        assert!(traj.ay.is_some());
        assert!((traj.dt - 0.01).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let cases: &[(&str, &str)] = &[
            ("", "empty file"),
            ("t,vx,r,delta1", "missing required column"),
            ("t,vx,r,delta1,delta2,bogus\n", "unknown column"),
            ("t,t,vx,r,delta1,delta2\n", "duplicate column"),
            ("t,vx,r,delta1,delta2\n0,1,0,0,0\n", "need at least 2 data rows"),
            ("t,vx,r,delta1,delta2\n0,1,0,0\n0.01,1,0,0,0\n", "expected 5 cells"),
            ("t,vx,r,delta1,delta2\n0,1,x,0,0\n0.01,1,0,0,0\n", "not a number"),
            ("t,vx,r,delta1,delta2\n0,1,inf,0,0\n0.01,1,0,0,0\n", "non-finite"),
            ("t,vx,r,delta1,delta2\n0,1,,0,0\n0.01,1,0,0,0\n", "empty cell"),
            ("t,vx,r,delta1,delta2\n0,1,0,0,0\n0.5,1,0,0,0\n1.5,1,0,0,0\n", "not uniform"),
        ];
        for (input, needle) in cases {
            let err = parse_trajectory_csv(input.as_bytes(), "case").unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains(needle), "`{input}` -> `{msg}` (wanted `{needle}`)");
        }
    }

    #[test]
    fn error_names_file_and_line() {
        let csv = "t,vx,r,delta1,delta2\n0,1.2,0,0,0\n0.01,1.2,bad,0,0\n";
        let err = parse_trajectory_csv(csv.as_bytes(), "run.csv").unwrap_err();
        assert_eq!(err.to_string(), "run.csv:3: column `r`: not a number: `bad`");
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("stiffid-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("traj.csv");
        let traj = example();
        write_trajectory(&path, &traj).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(traj, back);
        std::fs::remove_file(&path).ok();
    }
}
