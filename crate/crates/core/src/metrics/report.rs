use std::fmt::Write;

/// Metric values of one image; absent metrics were not computed for the evaluation mode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub uiqm: Option<f64>,
    pub uciqe: Option<f64>,
}

impl MetricRow {
    fn columns(&self) -> [Option<f64>; 5] {
        [self.psnr, self.ssim, self.ms_ssim, self.uiqm, self.uciqe]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

pub const CSV_HEADER: &str = "image,psnr,ssim,ms_ssim,uiqm,uciqe";

impl MetricReport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Per-column arithmetic mean over the rows that have the value, labelled `MEAN`.
    pub fn mean(&self) -> MetricRow {
        let col = |i: usize| {
            let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.columns()[i]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        MetricRow {
            image: "MEAN".into(),
            psnr: col(0),
            ssim: col(1),
            ms_ssim: col(2),
            uiqm: col(3),
            uciqe: col(4),
        }
    }

    /// Number of rows carrying each metric, in CSV column order.
    pub fn counts(&self) -> [usize; 5] {
        let mut n = [0; 5];
        for r in &self.rows {
            for (slot, v) in n.iter_mut().zip(r.columns()) {
                *slot += usize::from(v.is_some());
            }
        }
        n
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in self.rows.iter().chain(std::iter::once(&self.mean())) {
            out.push_str(&row.image);
            for v in row.columns() {
                out.push(',');
                if let Some(v) = v {
                    write!(out, "{v:.6}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_and_means() {
        let report = MetricReport {
            rows: vec![
                MetricRow {
                    image: "a".into(),
                    uiqm: Some(1.0),
                    uciqe: Some(0.5),
                    ..Default::default()
                },
                MetricRow {
                    image: "b".into(),
                    uiqm: Some(3.0),
                    uciqe: Some(0.25),
                    ..Default::default()
                },
            ],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "a,,,,1.000000,0.500000");
        assert_eq!(lines[3], "MEAN,,,,2.000000,0.375000");
        assert_eq!(report.counts(), [0, 0, 0, 2, 2]);
    }
}
