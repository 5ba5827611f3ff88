//! CSV helpers. Floats use Rust's shortest round-trip form, in exponent
//! notation outside `[1e-4, 1e16)`; NaN is written `nan`.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x != 0.0 && x.is_finite() && !(1e-4..1e16).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    Ok(String::from_utf8(writer.into_inner()?)?)
}

/// Writes `contents` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, contents).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

/// `out.csv` -> `out.svg`; stdout output gets `plot.svg`.
pub fn svg_path(out: Option<&Path>) -> std::path::PathBuf {
    out.map_or_else(|| "plot.svg".into(), |p| p.with_extension("svg"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_is_lowercase() {
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(-2.0), "-2");
        assert_eq!(fmt_f64(3.5e-15), "3.5e-15");
        assert_eq!(fmt_f64(0.0), "0");
        for x in [1e-300, 2.2250738585072014e-308, 6.02e23, -1.5e-7] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn header_then_rows() {
        let s = csv_string(&["a", "b"], vec![vec!["1".into(), "nan".into()]]).unwrap();
        assert_eq!(s, "a,b\n1,nan\n");
    }
}
