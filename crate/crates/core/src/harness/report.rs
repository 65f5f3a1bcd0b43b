//! CSV tables and PGM images. Every writer is a pure function of its inputs,
//! so repeated runs produce identical bytes.

use std::path::{Path, PathBuf};

use ndgrad::Tensor;

use super::formats::write_file;
use crate::error::{Error, Result};
use crate::metrics::{Aggregate, TrialReport};
use crate::trainer::LossLog;

pub const METRICS_HEADER: &str = "scene,trial,psnr_db,ssim";
pub const SUMMARY_HEADER: &str = "scene,psnr_mean,psnr_std,ssim_mean,ssim_std,count";
pub const SWEEP_HEADER: &str = "variant,psnr_mean,psnr_std,ssim_mean,ssim_std,count";
pub const HISTOGRAM_HEADER: &str = "bin,low,high,count";

/// A grayscale image to be written as PGM.
#[derive(Debug, Clone, PartialEq)]
pub struct MapImage {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl MapImage {
    /// Takes a `[H, W]` tensor as is and averages a `[C, H, W]` tensor over its first axis.
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Result<Self> {
        let (height, width, data) = match *t.shape() {
            [h, w] => (h, w, t.data().to_vec()),
            [c, h, w] => {
                let mut acc = vec![0.0; h * w];
                for plane in t.data().chunks(h * w) {
                    acc.iter_mut().zip(plane).for_each(|(a, v)| *a += v);
                }
                acc.iter_mut().for_each(|a| *a /= c as f64);
                (h, w, acc)
            }
            ref s => return Err(Error::Shape(format!("map image needs 2 or 3 axes, got {s:?}"))),
        };
        Ok(Self {
            name: name.into(),
            height,
            width,
            data,
        })
    }
}

fn agg_row(label: &str, a: &Aggregate) -> String {
    format!("{label},{},{},{},{},{}\n", a.psnr_mean, a.psnr_std, a.ssim_mean, a.ssim_std, a.count)
}

pub fn metrics_csv(report: &TrialReport) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for e in &report.entries {
        out.push_str(&format!("{},{},{},{}\n", e.scene, e.trial, e.psnr_db, e.ssim));
    }
    out
}

/// Per-scene mean and standard deviation, then an `all` row.
pub fn summary_csv(report: &TrialReport) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for (scene, a) in report.per_scene() {
        out.push_str(&agg_row(&scene.to_string(), &a));
    }
    out.push_str(&agg_row("all", &report.overall()));
    out
}

pub fn sweep_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a TrialReport)>) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for (label, r) in rows {
        out.push_str(&agg_row(label, &r.overall()));
    }
    out
}

pub fn histogram_csv(counts: &[u64]) -> String {
    let n = counts.len() as f64;
    let mut out = format!("{HISTOGRAM_HEADER}\n");
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{c}\n", i as f64 / n, (i + 1) as f64 / n));
    }
    out
}

/// Binary PGM with maxval 255; the largest value maps to 255 and nonpositive values to 0.
pub fn pgm(map: &MapImage) -> Result<Vec<u8>> {
    if map.data.len() != map.height * map.width || map.data.is_empty() {
        return Err(Error::Shape(format!(
            "map `{}` has {} values for {}x{}",
            map.name,
            map.data.len(),
            map.height,
            map.width
        )));
    }
    if map.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("map `{}` has non-finite values", map.name)));
    }
    let max = map.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.data.iter().map(|&v| {
        if max > 0.0 {
            (v / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// Writes `metrics.csv` and one `<name>.pgm` per map; returns the written paths in order.
pub fn emit_report(dir: &Path, report: &TrialReport, maps: &[MapImage]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(1 + maps.len());
    let path = dir.join("metrics.csv");
    write_file(&path, metrics_csv(report).as_bytes())?;
    written.push(path);
    for m in maps {
        let path = dir.join(format!("{}.pgm", m.name));
        write_file(&path, &pgm(m)?)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_summary(dir: &Path, report: &TrialReport) -> Result<PathBuf> {
    let path = dir.join("summary.csv");
    write_file(&path, summary_csv(report).as_bytes())?;
    Ok(path)
}

pub fn write_loss_log(path: &Path, log: &LossLog) -> Result<()> {
    write_file(path, log.to_csv().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::TrialEntry;

    fn report() -> TrialReport {
        TrialReport {
            scenario: "many-to-many".into(),
            entries: vec![
                TrialEntry { scene: 0, trial: 0, psnr_db: 20.0, ssim: 0.5 },
                TrialEntry { scene: 1, trial: 0, psnr_db: 30.0, ssim: 0.75 },
            ],
        }
    }

    #[test]
    fn metrics_header_is_fixed() {
        let csv = metrics_csv(&report());
        assert_eq!(csv, "scene,trial,psnr_db,ssim\n0,0,20,0.5\n1,0,30,0.75\n");
        let s = summary_csv(&report());
        assert!(s.ends_with("all,25,5,0.625,0.125,2\n"), "{s}");
    }

    #[test]
    fn pgm_scaling() {
        let m = MapImage { name: "m".into(), height: 1, width: 3, data: vec![0.0, 0.5, 2.0] };
        assert_eq!(pgm(&m).unwrap(), b"P5\n3 1\n255\n\x00\x40\xff".to_vec());
        let c = MapImage { data: vec![0.3; 3], ..m.clone() };
        assert!(pgm(&c).unwrap().ends_with(&[255, 255, 255]));
        let z = MapImage { data: vec![0.0; 3], ..m };
        assert!(pgm(&z).unwrap().ends_with(&[0, 0, 0]));
    }

    #[test]
    fn channel_mean_map() {
        let t = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(MapImage::from_tensor("v", &t).unwrap().data, vec![2.0, 4.0]);
    }

    #[test]
    fn histogram_rows() {
        assert_eq!(histogram_csv(&[3, 1]), "bin,low,high,count\n0,0,0.5,3\n1,0.5,1,1\n");
    }
}
