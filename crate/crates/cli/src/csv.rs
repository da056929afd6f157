use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use perex::sim::{EpisodeMetrics, Heatmap};

use crate::{CliError, Result};

pub const SIG_DIGITS: usize = 9;

pub const FRAME_COLUMNS: [&str; 9] =
    ["time", "x", "y", "z", "yaw", "tracked_count", "tracked_quality", "drift_norm", "exploration_rate"];

/// Decimal notation (never exponent form) rounded to 9 significant digits.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i64 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::with_capacity(digits.len() + 8);
    if negative {
        out.push('-');
    }
    if exp < 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    } else {
        let int_len = exp as usize + 1;
        if int_len >= digits.len() {
            out.push_str(&digits);
            out.extend(std::iter::repeat_n('0', int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn frames_csv(m: &EpisodeMetrics) -> String {
    let mut s = FRAME_COLUMNS.join(",");
    s.push('\n');
    for f in &m.frames {
        let p = &f.position;
        let row = [f.time, p.x, p.y, p.z, f.yaw].map(format_sig).join(",");
        let tail = [f.tracked_quality, f.drift_norm, f.exploration_rate].map(format_sig).join(",");
        let _ = writeln!(s, "{row},{},{tail}", f.tracked_count());
    }
    s
}

pub fn write_frames(path: &Path, m: &EpisodeMetrics) -> Result<()> {
    write_text(path, &frames_csv(m))
}

/// Normalized heatmap as a grid: one row per image row `v`, one column per `u` bin.
pub fn heatmap_csv(h: &Heatmap) -> String {
    let (bu, bv) = h.bins;
    let mut s = String::from("v");
    for u in 0..bu {
        let _ = write!(s, ",u{u}");
    }
    s.push('\n');
    let n = h.normalized();
    for v in 0..bv {
        let _ = write!(s, "{v}");
        for value in &n[v * bu..(v + 1) * bu] {
            s.push(',');
            s.push_str(&format_sig(*value));
        }
        s.push('\n');
    }
    s
}

pub fn write_heatmap(path: &Path, h: &Heatmap) -> Result<()> {
    write_text(path, &heatmap_csv(h))
}

/// Header and rows of a numeric CSV document.
pub fn parse_numeric_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::Config("empty CSV document".into()))?;
    let header: Vec<String> = header.split(',').map(str::to_owned).collect();
    let rows = lines
        .enumerate()
        .map(|(i, line)| {
            let row: Vec<f64> = line
                .split(',')
                .map(|x| x.parse().map_err(|_| CliError::Config(format!("line {}: bad number `{x}`", i + 2))))
                .collect::<Result<_>>()?;
            if row.len() != header.len() {
                return Err(CliError::Config(format!("line {}: expected {} fields", i + 2, header.len())));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
