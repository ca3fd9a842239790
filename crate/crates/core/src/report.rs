//! Pareto front as CSV and as a standalone SVG scatter plot.

use std::fmt::Write;

use crate::dse::ParetoFront;

pub fn pareto_csv(front: &ParetoFront) -> String {
    let mut s = String::from(
        "config_hash,strategy,batch,cuts,throughput_inputs_s,latency_s,throughput_gops,dsp,bram_kb,lut,bandwidth_gbps\n",
    );
    for p in &front.points {
        let cuts = p.config.cuts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.config.hash(),
            p.config.strategy.name(),
            p.config.batch,
            cuts,
            p.estimate.throughput_inputs_s,
            p.estimate.latency_s,
            p.estimate.throughput_gops,
            p.resources.dsp,
            p.resources.bram_kb,
            p.resources.lut,
            p.resources.bandwidth_gbps
        );
    }
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Throughput (inputs/s) against batch-1 latency (ms), both axes linear.
pub fn pareto_svg(front: &ParetoFront, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const L: f64 = 80.0;
    const R: f64 = 30.0;
    const T: f64 = 50.0;
    const B: f64 = 60.0;
    let xs: Vec<f64> = front.points.iter().map(|p| p.estimate.latency_s * 1e3).collect();
    let ys: Vec<f64> = front.points.iter().map(|p| p.estimate.throughput_inputs_s).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 * hi.abs().max(1.0) {
            (lo * 0.9, hi * 1.1 + 1e-9)
        } else {
            let pad = (hi - lo) * 0.05;
            ((lo - pad).max(0.0), hi + pad)
        }
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - B,
        W - R,
        H - B
    );
    let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(fx),
            H - B + 18.0,
            fmt_tick(fx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            L - 6.0,
            py(fy) + 4.0,
            fmt_tick(fy)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">batch-1 latency (ms)</text>"#,
        (L + W - R) / 2.0,
        H - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">throughput (inputs/s)</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );
    if xs.len() > 1 {
        let path: Vec<String> = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
            path.join(" ")
        );
    }
    for (p, (&x, &y)) in front.points.iter().zip(xs.iter().zip(&ys)) {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#1f77b4"><title>{} B={} T={:.3} L={:.4}ms</title></circle>"##,
            px(x),
            py(y),
            p.config.strategy.name(),
            p.config.batch,
            y,
            x
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    }
}
