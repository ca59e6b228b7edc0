//! Z-score heatmaps of one (sensor, step) column group: rows are the seven
//! parameters plus ssr and anomaly score, columns are wafers in time order.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::anomaly::{standardize, standardize_rolling};
use crate::error::{Error, Result};

use super::tables::{SignatureTable, CELL_NAMES};

/// Colour scale saturates at this |z|.
pub const Z_CLIP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub title: String,
    pub wafers: Vec<String>,
    /// `z[row][wafer]` with rows in `CELL_NAMES` order.
    pub z: Vec<Vec<f64>>,
}

pub fn heatmap_matrix(table: &SignatureTable, sensor: &str, step: &str, window: Option<usize>) -> Result<Heatmap> {
    let g = table.group_index(sensor, step).ok_or_else(|| {
        Error::validation(format!("table for tool {} has no {sensor}:{step} columns", table.tool))
    })?;
    let col = table.column(g);
    if col.len() < 2 {
        return Err(Error::validation(format!(
            "{sensor}:{step} has {} fitted wafer(s); a heatmap needs at least 2",
            col.len()
        )));
    }
    let rows: Vec<Vec<f64>> = col.iter().map(|(_, c)| c.to_vec()).collect();
    let z = match window {
        Some(w) => standardize_rolling(&rows, w),
        None => standardize(&rows),
    };
    Ok(Heatmap {
        title: format!("{} {sensor}:{step}", table.tool),
        wafers: col.iter().map(|(r, _)| r.wafer.clone()).collect(),
        z: (0..CELL_NAMES.len()).map(|j| z.iter().map(|r| r[j]).collect()).collect(),
    })
}

impl Heatmap {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["param".to_owned()];
        header.extend(self.wafers.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in CELL_NAMES.iter().zip(&self.z) {
            let mut rec = vec![name.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_svg(&self) -> String {
        const CELL_W: usize = 8;
        const CELL_H: usize = 18;
        const LEFT: usize = 48;
        const TOP: usize = 24;
        let width = LEFT + CELL_W * self.wafers.len() + 8;
        let height = TOP + CELL_H * self.z.len() + 8;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="{LEFT}" y="15">{}</text>"#, escape(&self.title));
        for (i, (name, row)) in CELL_NAMES.iter().zip(&self.z).enumerate() {
            let y = TOP + i * CELL_H;
            let _ = writeln!(s, r#"<text x="4" y="{}">{name}</text>"#, y + CELL_H - 5);
            for (j, z) in row.iter().enumerate() {
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}"><title>{} {name} z={z:.3}</title></rect>"#,
                    LEFT + j * CELL_W,
                    diverging(*z),
                    escape(&self.wafers[j])
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue (negative) through white to red (positive), saturating at `Z_CLIP`.
pub fn diverging(z: f64) -> String {
    let t = if z.is_finite() { (z / Z_CLIP).clamp(-1.0, 1.0) } else { 0.0 };
    let (blue, red) = ((33.0, 102.0, 172.0), (178.0, 24.0, 43.0));
    let end = if t < 0.0 { blue } else { red };
    let a = t.abs();
    let mix = |c: f64| (255.0 + (c - 255.0) * a).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

/// Writes `<prefix>.csv` and `<prefix>.svg`.
pub fn render_heatmap(
    table: &SignatureTable,
    sensor: &str,
    step: &str,
    prefix: &Path,
    window: Option<usize>,
) -> Result<(PathBuf, PathBuf)> {
    let h = heatmap_matrix(table, sensor, step, window)?;
    let with_suffix = |ext: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    let (csv_path, svg_path) = (with_suffix(".csv"), with_suffix(".svg"));
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    h.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::Parse {
        path: csv_path.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&svg_path, h.to_svg()).map_err(|e| Error::io(&svg_path, e))?;
    Ok((csv_path, svg_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::tables::TableRow;

    fn table(values: &[[f64; 9]]) -> SignatureTable {
        SignatureTable {
            tool: "T".into(),
            groups: vec![("S".into(), "P".into())],
            rows: values
                .iter()
                .enumerate()
                .map(|(i, v)| TableRow {
                    wafer: format!("W{i}"),
                    lot: "L".into(),
                    seq: i,
                    cells: vec![Some(*v)],
                })
                .collect(),
        }
    }

    #[test]
    fn constant_table_is_white() {
        let h = heatmap_matrix(&table(&[[1.0; 9]; 5]), "S", "P", None).unwrap();
        assert!(h.z.iter().flatten().all(|v| *v == 0.0));
        let svg = h.to_svg();
        assert_eq!(svg.matches("fill=\"#ffffff\"").count(), 45);
    }

    #[test]
    fn colour_scale_clips() {
        assert_eq!(diverging(0.0), "#ffffff");
        assert_eq!(diverging(4.0), diverging(40.0));
        assert_eq!(diverging(-4.0), "#2166ac");
    }

    #[test]
    fn unknown_group_or_too_few_wafers() {
        assert!(heatmap_matrix(&table(&[[1.0; 9]; 5]), "S", "Q", None).is_err());
        assert!(heatmap_matrix(&table(&[[1.0; 9]]), "S", "P", None).is_err());
    }
}
