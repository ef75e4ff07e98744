//! Static SVG of a posterior trajectory: median line over a 95% ribbon,
//! time running backwards from the present on x, `N_e` on a log y axis.

use std::fmt::Write;

use tajima_het::mcmc::PosteriorSummary;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;

pub fn trajectory_svg(s: &PosteriorSummary, note: &str) -> String {
    let positive = |v: &f64| v.is_finite() && *v > 0.0;
    let lo = s.q025.iter().chain(&s.median).filter(|v| positive(v)).cloned().fold(f64::INFINITY, f64::min);
    let hi = s.q975.iter().chain(&s.median).filter(|v| positive(v)).cloned().fold(0.0, f64::max);
    let (dlo, dhi) = if lo.is_finite() && hi > 0.0 { (lo.log10().floor(), hi.log10().ceil()) } else { (-1.0, 1.0) };
    let dhi = if dhi <= dlo { dlo + 1.0 } else { dhi };
    let tmax = s.time.last().copied().unwrap_or(1.0) + s.time.first().copied().unwrap_or(0.0);
    let x = |t: f64| LEFT + (W - LEFT - RIGHT) * t / tmax;
    let y = |v: f64| {
        let v = v.max(10f64.powf(dlo));
        TOP + (H - TOP - BOTTOM) * (dhi - v.log10()) / (dhi - dlo)
    };

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, "<!--{} -->", note.replace("--", "-"));
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);

    let mut ribbon = String::new();
    for (t, v) in s.time.iter().zip(&s.q975) {
        let _ = write!(ribbon, "{:.2},{:.2} ", x(*t), y(*v));
    }
    for (t, v) in s.time.iter().zip(&s.q025).rev() {
        let _ = write!(ribbon, "{:.2},{:.2} ", x(*t), y(*v));
    }
    let _ = writeln!(out, r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##, ribbon.trim_end());
    let median: Vec<String> = s.time.iter().zip(&s.median).map(|(t, v)| format!("{:.2},{:.2}", x(*t), y(*v))).collect();
    let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##, median.join(" "));

    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{x0},{y0} V{y1} H{x1}" fill="none" stroke="black"/>"#);
    let mut d = dlo;
    while d <= dhi + 1e-9 {
        let yy = y(10f64.powf(d));
        let _ = writeln!(out, r#"<line x1="{}" y1="{yy:.2}" x2="{x0}" y2="{yy:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" font-size="12" text-anchor="end">1e{}</text>"#, x0 - 8.0, yy + 4.0, d as i64);
        d += 1.0;
    }
    for i in 0..=5 {
        let t = tmax * i as f64 / 5.0;
        let xx = x(t);
        let _ = writeln!(out, r#"<line x1="{xx:.2}" y1="{y1}" x2="{xx:.2}" y2="{}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(out, r#"<text x="{xx:.2}" y="{}" font-size="12" text-anchor="middle">{t:.3}</text>"#, y1 + 20.0);
    }
    let _ =
        writeln!(out, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">time before present</text>"#, (x0 + x1) / 2.0, H - 8.0);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">effective population size</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    out.push_str("</svg>\n");
    out
}
