//! Quadrant-plot artifacts: a CSV of labeled GPS-UP points and an SVG
//! scatter with axis lines at speedup = 1 and powerup = 1, the greenup = 1
//! diagonal, and green/red zone shading.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::green::{classify_zone, GpsUp};

/// Columns: label, speedup, powerup, greenup, zone. Values keep full
/// precision.
pub fn write_csv(points: &[(String, GpsUp)], w: impl Write) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Domain("no points to plot".into()));
    }
    let mut writer = csv::Writer::from_writer(w);
    writer
        .write_record(["label", "speedup", "powerup", "greenup", "zone"])
        .map_err(csv_err)?;
    for (label, g) in points {
        writer
            .write_record([
                label.as_str(),
                &format!("{}", g.speedup),
                &format!("{}", g.powerup),
                &format!("{}", g.greenup),
                classify_zone(g).label(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv(r: impl Read) -> Result<Vec<(String, GpsUp, String)>> {
    let mut reader = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        if record.len() != 5 {
            return Err(Error::Domain(format!(
                "quadrant CSV row has {} fields, expected 5",
                record.len()
            )));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| Error::Domain(format!("bad numeric field '{}': {e}", &record[i])))
        };
        out.push((
            record[0].to_string(),
            GpsUp {
                speedup: parse(1)?,
                powerup: parse(2)?,
                greenup: parse(3)?,
            },
            record[4].to_string(),
        ));
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Domain(format!("csv: {e}"))
}

const SVG_SIZE: f64 = 480.0;
const SVG_MARGIN: f64 = 48.0;

/// Scatter of powerup (y) against speedup (x). Points below the
/// diagonal have greenup > 1 (energy saved); that half is shaded green,
/// the other red.
pub fn write_svg(points: &[(String, GpsUp)], mut w: impl Write) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Domain("no points to plot".into()));
    }
    let max_val = points
        .iter()
        .flat_map(|(_, g)| [g.speedup, g.powerup])
        .fold(2.0f64, f64::max)
        * 1.15;
    let span = SVG_SIZE - 2.0 * SVG_MARGIN;
    let sx = |v: f64| SVG_MARGIN + v / max_val * span;
    let sy = |v: f64| SVG_SIZE - SVG_MARGIN - v / max_val * span;

    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" viewBox="0 0 {0} {0}">"#,
        SVG_SIZE
    )?;
    writeln!(
        w,
        r#"<rect x="0" y="0" width="{0}" height="{0}" fill="white"/>"#,
        SVG_SIZE
    )?;
    // Greenup > 1 half (below the diagonal), then the wasteful half.
    writeln!(
        w,
        r##"<polygon points="{x0},{y0} {x1},{y0} {x1},{y1}" fill="#2e8b57" fill-opacity="0.15"/>"##,
        x0 = sx(0.0),
        y0 = sy(0.0),
        x1 = sx(max_val),
        y1 = sy(max_val),
    )?;
    writeln!(
        w,
        r##"<polygon points="{x0},{y0} {x0},{y1} {x1},{y1}" fill="#b22222" fill-opacity="0.12"/>"##,
        x0 = sx(0.0),
        y0 = sy(0.0),
        x1 = sx(max_val),
        y1 = sy(max_val),
    )?;
    // Greenup = 1 diagonal.
    writeln!(
        w,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#444" stroke-dasharray="4 3"/>"##,
        sx(0.0),
        sy(0.0),
        sx(max_val),
        sy(max_val)
    )?;
    // Axis lines at speedup = 1 and powerup = 1.
    writeln!(
        w,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="1.5"/>"#,
        sx(1.0),
        sy(0.0),
        sx(1.0),
        sy(max_val)
    )?;
    writeln!(
        w,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="1.5"/>"#,
        sx(0.0),
        sy(1.0),
        sx(max_val),
        sy(1.0)
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="{}" font-size="12">speedup</text>"#,
        sx(max_val) - 52.0,
        sy(0.0) + 28.0
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="{}" font-size="12" transform="rotate(-90 {x} {y})" text-anchor="end">powerup</text>"#,
        SVG_MARGIN - 28.0,
        sy(max_val) + 8.0,
        x = SVG_MARGIN - 28.0,
        y = sy(max_val) + 8.0
    )?;
    for (label, g) in points {
        let zone = classify_zone(g);
        let color = if zone.is_green() {
            "#1d7a3e"
        } else {
            "#a02020"
        };
        writeln!(
            w,
            r#"<circle cx="{}" cy="{}" r="5" fill="{color}"/>"#,
            sx(g.speedup),
            sy(g.powerup)
        )?;
        writeln!(
            w,
            r#"<text x="{}" y="{}" font-size="11">{}</text>"#,
            sx(g.speedup) + 7.0,
            sy(g.powerup) - 5.0,
            xml_escape(label)
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{fixtures, gps_up};

    fn table_points() -> Vec<(String, GpsUp)> {
        let t = &fixtures::ANT;
        t.comparisons[..2]
            .iter()
            .map(|c| {
                let g = gps_up(
                    &t.runs[c.baseline].metrics(),
                    &t.runs[c.candidate].metrics(),
                )
                .unwrap();
                (c.label.to_string(), g)
            })
            .collect()
    }

    #[test]
    fn csv_has_two_green_rows_for_the_reference_pair() {
        let mut buf = Vec::new();
        write_csv(&table_points(), &mut buf).unwrap();
        let rows = read_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 2);
        for (_, _, zone) in &rows {
            assert!(zone.starts_with("green"), "zone = {zone}");
        }
    }

    #[test]
    fn csv_roundtrips_at_six_significant_digits() {
        let points = table_points();
        let mut buf = Vec::new();
        write_csv(&points, &mut buf).unwrap();
        let rows = read_csv(buf.as_slice()).unwrap();
        for ((_, orig), (_, parsed, _)) in points.iter().zip(rows.iter()) {
            for (a, b) in [
                (orig.speedup, parsed.speedup),
                (orig.powerup, parsed.powerup),
                (orig.greenup, parsed.greenup),
            ] {
                assert!((a - b).abs() <= a.abs() * 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn svg_contains_axes_and_points() {
        let points = vec![(
            "origin".to_string(),
            GpsUp {
                speedup: 1.0,
                powerup: 1.0,
                greenup: 1.0,
            },
        )];
        let mut buf = Vec::new();
        write_svg(&points, &mut buf).unwrap();
        let svg = String::from_utf8(buf).unwrap();
        assert!(svg.contains("<svg"));
        assert!(svg.contains("circle"));
        // Axis lines at 1 on both axes and the shading polygons.
        assert!(svg.matches("<line").count() >= 3);
        assert!(svg.matches("<polygon").count() == 2);
    }

    #[test]
    fn empty_point_set_rejected() {
        let mut buf = Vec::new();
        assert!(write_csv(&[], &mut buf).is_err());
        assert!(write_svg(&[], &mut buf).is_err());
    }
}
