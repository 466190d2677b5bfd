//! Self-contained SVG heatmap for parameter sweeps: one rect per cell,
//! diverging color scale clamped to a fixed range, labeled axes and an
//! embedded numeric color bar. Byte-deterministic output.

use std::fmt::Write as _;

use contraction_core::fk::SweepResult;

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Diverging blue-white-red scale on [lo, hi]; NaN cells render grey.
fn color(v: f64, lo: f64, hi: f64) -> String {
    if v.is_nan() {
        return "rgb(128,128,128)".to_string();
    }
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (lerp(33.0, 255.0, u), lerp(102.0, 255.0, u), lerp(172.0, 255.0, u))
    } else {
        let u = (t - 0.5) / 0.5;
        (lerp(255.0, 178.0, u), lerp(255.0, 24.0, u), lerp(255.0, 43.0, u))
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.3}")
}

/// Render the sweep with theta^2 on the x axis and p on the y axis.
/// Values are clamped to [lo, hi] for color only; the CSV keeps raw values.
pub fn render_heatmap(sweep: &SweepResult, lo: f64, hi: f64) -> String {
    let np = sweep.p_grid.len();
    let nt = sweep.theta2_grid.len();
    let cell: f64 = 18.0;
    let margin_left = 70.0;
    let margin_bottom = 55.0;
    let margin_top = 30.0;
    let bar_w = 20.0;
    let bar_gap = 25.0;
    let plot_w = cell * nt as f64;
    let plot_h = cell * np as f64;
    let width = margin_left + plot_w + bar_gap + bar_w + 60.0;
    let height = margin_top + plot_h + margin_bottom;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"16\" font-family=\"monospace\" font-size=\"12\">J(p eta)/p</text>",
        margin_left
    );

    // cells: p rows bottom-to-top, theta2 columns left-to-right
    for i in 0..np {
        for j in 0..nt {
            let v = sweep.value(i, j);
            let x = margin_left + cell * j as f64;
            let y = margin_top + plot_h - cell * (i + 1) as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"{}\"/>",
                color(v, lo, hi)
            );
        }
    }

    // axis labels and extreme ticks
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\">theta^2</text>",
        margin_left + plot_w / 2.0 - 25.0,
        margin_top + plot_h + 38.0
    );
    let _ = writeln!(
        s,
        "<text x=\"12\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\">p</text>",
        margin_top + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\">{}</text>",
        margin_left,
        margin_top + plot_h + 16.0,
        fmt_tick(sweep.theta2_grid[0])
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\">{}</text>",
        margin_left + plot_w - 24.0,
        margin_top + plot_h + 16.0,
        fmt_tick(sweep.theta2_grid[nt - 1])
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\">{}</text>",
        margin_left - 36.0,
        margin_top + plot_h,
        fmt_tick(sweep.p_grid[0])
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\">{}</text>",
        margin_left - 36.0,
        margin_top + 10.0,
        fmt_tick(sweep.p_grid[np - 1])
    );

    // color bar with numeric labels
    let bar_x = margin_left + plot_w + bar_gap;
    let bar_steps = 64usize;
    let seg = plot_h / bar_steps as f64;
    for k in 0..bar_steps {
        let v = hi - (hi - lo) * (k as f64 + 0.5) / bar_steps as f64;
        let y = margin_top + seg * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{bar_x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{:.2}\" fill=\"{}\"/>",
            seg + 0.5,
            color(v, lo, hi)
        );
    }
    for (frac, v) in [(0.0, hi), (0.5, 0.5 * (lo + hi)), (1.0, lo)] {
        let y = margin_top + plot_h * frac + 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{y:.1}\" font-family=\"monospace\" font-size=\"10\">{}</text>",
            bar_x + bar_w + 4.0,
            fmt_tick(v)
        );
    }
    s.push_str("</svg>\n");
    s
}
