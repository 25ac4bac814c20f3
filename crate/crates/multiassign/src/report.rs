//! CSV output for metrics logs and ablation tables, and the SVG loss plot.

use std::fmt::Write as _;

use multiassign_core::harness::{branch_label, CellResult, MetricsLog};

use crate::error::{AppError, AppResult};

pub const METRICS_HEADER: &str = "epoch,branch,loss_cls,loss_box,loss_total,o2o_primary_loss,ap50,map";
pub const ABLATION_HEADER: &str = "n_aux,diverse,aux_mode,rank,seed_count,median_o2o_loss,median_ap50,param_count";

/// Six significant digits, fixed or scientific like C's `%g`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    // round first so the exponent reflects carries such as 9.999996 -> 10
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

pub fn metrics_csv(log: &MetricsLog) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in &log.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            branch_label(r.branch),
            sig6(r.loss_cls),
            sig6(r.loss_box),
            sig6(r.loss_total),
            sig6(r.o2o_primary_loss),
            sig6(r.ap50),
            sig6(r.map)
        );
    }
    s
}

pub fn ablation_csv(results: &[CellResult]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.cell.n_aux,
            r.cell.diverse,
            r.cell.aux_mode.as_str(),
            r.cell.rank,
            r.seed_count,
            sig6(r.median_o2o_loss),
            sig6(r.median_ap50),
            r.param_count
        );
    }
    s
}

/// One parsed metrics CSV row, as far as plotting needs it.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub epoch: usize,
    pub branch: String,
    pub loss_total: f64,
    pub o2o_primary_loss: f64,
}

pub fn parse_metrics_csv(text: &str) -> AppResult<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(AppError::Invalid("metrics CSV has an unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || AppError::Invalid(format!("metrics CSV line {}: {line:?}", i + 2));
            if f.len() != 8 {
                return Err(bad());
            }
            Ok(CsvRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                branch: f[1].to_string(),
                loss_total: f[4].parse().map_err(|_| bad())?,
                o2o_primary_loss: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

const PALETTE: [&str; 7] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf",
];

/// Loss curves from a metrics CSV: the primary one-to-one probe loss and
/// each branch's training loss, one polyline each, against the epoch.
pub fn loss_plot_svg(csv: &str) -> AppResult<String> {
    let rows = parse_metrics_csv(csv)?;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut probe: Vec<(f64, f64)> = Vec::new();
    for r in &rows {
        let x = r.epoch as f64;
        if r.branch == "primary" {
            probe.push((x, r.o2o_primary_loss));
        }
        let label = format!("{} train loss", r.branch);
        match series.iter_mut().find(|(l, _)| *l == label) {
            Some((_, pts)) => pts.push((x, r.loss_total)),
            None => series.push((label, vec![(x, r.loss_total)])),
        }
    }
    series.insert(0, ("primary one-to-one loss".into(), probe));

    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 190.0, 30.0, 50.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let xmax = all.iter().map(|p| p.0).fold(1.0, f64::max);
    let ymax = all
        .iter()
        .map(|p| p.1)
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.05;
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + pw * x / xmax;
    let sy = |y: f64| top + ph * (1.0 - y / ymax);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + ph
    );
    for i in 0..=4 {
        let y = ymax * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(y) + 4.0,
            sig6(y)
        );
    }
    let epochs = xmax as usize;
    let step = (epochs / 10).max(1);
    for e in (0..=epochs).step_by(step) {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{e}</text>"#,
            sx(e as f64),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">epoch</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">loss</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let dash = if i == 0 { "" } else { r#" stroke-dasharray="5,3""# };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#,
            w - right + 10.0,
            w - right + 30.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{label}</text>"#, w - right + 36.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}
