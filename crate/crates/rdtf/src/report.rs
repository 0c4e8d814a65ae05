//! Verification-report plumbing: per-check records with stable anchor ids,
//! a deterministic text renderer, an RFC 4180 CSV encoder, and a minimal
//! self-contained SVG line plotter.

use crate::error::{Error, Result};

/// Outcome of one verification check.
#[derive(Clone, Debug)]
pub struct CheckRecord {
    pub name: String,
    /// Stable estimate id; the renderer rejects records without one.
    pub anchor: String,
    /// Fitted constants and measured quantities, in declaration order.
    pub constants: Vec<(String, f64)>,
    pub tolerance: f64,
    /// Signed slack against the pass threshold; nonnegative when passing
    /// for asserted checks.
    pub margin: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl CheckRecord {
    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }
}

/// Environment stamp for reproducibility.
#[derive(Clone, Debug)]
pub struct EnvInfo {
    pub n: usize,
    pub res: usize,
    pub extent: f64,
    pub dx: f64,
    pub dt0: f64,
    pub steps: usize,
    pub horizon: f64,
    pub seed: Option<u64>,
    pub deterministic: bool,
    /// Free-form extra facts (initial-data report values and the like).
    pub extras: Vec<(String, String)>,
}

/// Full scenario report.
#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub scenario: String,
    pub env: EnvInfo,
    pub checks: Vec<CheckRecord>,
    /// Omitted from the rendering in deterministic mode.
    pub runtime_seconds: Option<f64>,
}

impl EstimateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Deterministic text rendering. Every check must carry an anchor id.
    pub fn render(&self) -> Result<String> {
        for c in &self.checks {
            if c.anchor.trim().is_empty() {
                return Err(Error::invalid(
                    "report",
                    format!("check {} has no anchor id", c.name),
                ));
            }
        }
        let mut out = String::new();
        out.push_str("rdtf-report v1\n");
        out.push_str(&format!("scenario: {}\n", self.scenario));
        out.push_str(&format!(
            "lattice: n={} res={} extent={:.6e} dx={:.6e}\n",
            self.env.n, self.env.res, self.env.extent, self.env.dx
        ));
        out.push_str(&format!(
            "flow: dt0={:.6e} steps={} horizon={:.6e}\n",
            self.env.dt0, self.env.steps, self.env.horizon
        ));
        match self.env.seed {
            Some(s) => out.push_str(&format!("seed: {s}\n")),
            None => out.push_str("seed: none\n"),
        }
        out.push_str(&format!("deterministic: {}\n", self.env.deterministic));
        if !self.env.deterministic {
            if let Some(rt) = self.runtime_seconds {
                out.push_str(&format!("runtime-seconds: {rt:.3e}\n"));
            }
        }
        for (k, v) in &self.env.extras {
            out.push_str(&format!("env {k}: {v}\n"));
        }
        for c in &self.checks {
            out.push('\n');
            out.push_str(&format!("check {}\n", c.name));
            out.push_str(&format!("  anchor: {}\n", c.anchor));
            if !c.constants.is_empty() {
                let parts: Vec<String> = c
                    .constants
                    .iter()
                    .map(|(k, v)| format!("{k}={v:.6e}"))
                    .collect();
                out.push_str(&format!("  constants: {}\n", parts.join(" ")));
            }
            out.push_str(&format!("  tolerance: {:.6e}\n", c.tolerance));
            out.push_str(&format!("  margin: {:.6e}\n", c.margin));
            for note in &c.notes {
                out.push_str(&format!("  note: {note}\n"));
            }
            out.push_str(&format!("  pass: {}\n", c.pass));
        }
        out.push('\n');
        out.push_str(&format!(
            "verdict: {}\n",
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        Ok(out)
    }
}

/// Encode one CSV field per RFC 4180: quote when the field contains a comma,
/// a quote, or a line break; double embedded quotes.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Encode rows (header first) as an RFC 4180 table with CRLF line ends.
pub fn csv_encode(rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for row in rows {
        let fields: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        out.push_str(&fields.join(","));
        out.push_str("\r\n");
    }
    out
}

/// A single line series for the plotter.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Minimal deterministic SVG line plot. Axes are linear; callers transform
/// to logs themselves and say so in the labels.
#[derive(Clone, Debug)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

impl Plot {
    pub fn svg(&self) -> String {
        let mut lo_x = f64::INFINITY;
        let mut hi_x = f64::NEG_INFINITY;
        let mut lo_y = f64::INFINITY;
        let mut hi_y = f64::NEG_INFINITY;
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() && y.is_finite() {
                    lo_x = lo_x.min(x);
                    hi_x = hi_x.max(x);
                    lo_y = lo_y.min(y);
                    hi_y = hi_y.max(y);
                }
            }
        }
        if !lo_x.is_finite() {
            lo_x = 0.0;
            hi_x = 1.0;
            lo_y = 0.0;
            hi_y = 1.0;
        }
        if hi_x - lo_x <= 0.0 {
            hi_x = lo_x + 1.0;
        }
        if hi_y - lo_y <= 0.0 {
            hi_y = lo_y + 1.0;
        }
        let iw = PLOT_W - MARGIN_L - MARGIN_R;
        let ih = PLOT_H - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - lo_x) / (hi_x - lo_x) * iw;
        let sy = |y: f64| MARGIN_T + (1.0 - (y - lo_y) / (hi_y - lo_y)) * ih;

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\" \
             font-family=\"monospace\" font-size=\"11\">\n"
        ));
        out.push_str(&format!(
            "<rect x=\"0\" y=\"0\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n"
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
            MARGIN_L + iw / 2.0,
            xml_escape(&self.title)
        ));
        out.push_str(&format!(
            "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{iw:.1}\" height=\"{ih:.1}\" \
             fill=\"none\" stroke=\"#333\"/>\n"
        ));
        for k in 0..=4 {
            let fx = lo_x + (hi_x - lo_x) * k as f64 / 4.0;
            let px = sx(fx);
            out.push_str(&format!(
                "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#bbb\" stroke-dasharray=\"3 4\"/>\n",
                MARGIN_T,
                MARGIN_T + ih
            ));
            out.push_str(&format!(
                "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{fx:.3e}</text>\n",
                MARGIN_T + ih + 16.0
            ));
            let fy = lo_y + (hi_y - lo_y) * k as f64 / 4.0;
            let py = sy(fy);
            out.push_str(&format!(
                "<line x1=\"{MARGIN_L}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#bbb\" stroke-dasharray=\"3 4\"/>\n",
                MARGIN_L + iw
            ));
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{fy:.3e}</text>\n",
                MARGIN_L - 6.0,
                py + 4.0
            ));
        }
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_L + iw / 2.0,
            PLOT_H - 10.0,
            xml_escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
            MARGIN_T + ih / 2.0,
            MARGIN_T + ih / 2.0,
            xml_escape(&self.y_label)
        ));
        for (si, s) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if pts.len() > 1 {
                out.push_str(&format!(
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                    pts.join(" ")
                ));
            }
            for p in &pts {
                let (px, py) = p.split_once(',').unwrap();
                out.push_str(&format!(
                    "<circle cx=\"{px}\" cy=\"{py}\" r=\"2.2\" fill=\"{color}\"/>\n"
                ));
            }
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
                MARGIN_L + iw - 150.0,
                MARGIN_T + 16.0 + 14.0 * si as f64,
                xml_escape(&s.label)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report(anchored: bool) -> EstimateReport {
        EstimateReport {
            scenario: "demo".into(),
            env: EnvInfo {
                n: 3,
                res: 16,
                extent: 2.0,
                dx: 0.125,
                dt0: 1e-3,
                steps: 100,
                horizon: 0.5,
                seed: Some(7),
                deterministic: true,
                extras: vec![("eps_measured".into(), "1.000000e-2".into())],
            },
            checks: vec![CheckRecord {
                name: "global_nnsc".into(),
                anchor: if anchored {
                    "scalar/global-nnsc".into()
                } else {
                    " ".into()
                },
                constants: vec![("tol_grid".into(), 0.01), ("c_model".into(), 1.0)],
                tolerance: 0.01,
                margin: 0.004,
                pass: true,
                notes: vec!["gated slices: 5".into()],
            }],
            runtime_seconds: Some(12.5),
        }
    }

    #[test]
    fn renderer_is_deterministic_and_omits_runtime() {
        let rep = sample_report(true);
        let a = rep.render().unwrap();
        let b = rep.render().unwrap();
        assert_eq!(a, b);
        assert!(!a.contains("runtime-seconds"));
        assert!(a.contains("check global_nnsc"));
        assert!(a.contains("anchor: scalar/global-nnsc"));
        assert!(a.contains("tol_grid=1.000000e-2"));
        assert!(a.contains("verdict: PASS"));
        let mut live = rep.clone();
        live.env.deterministic = false;
        assert!(live.render().unwrap().contains("runtime-seconds"));
    }

    #[test]
    fn unanchored_check_is_rejected() {
        let rep = sample_report(false);
        assert!(matches!(rep.render(), Err(Error::Invalid { .. })));
    }

    #[test]
    fn csv_quoting_follows_rfc_4180() {
        let rows = vec![
            vec!["t".to_string(), "label".to_string()],
            vec!["1.0".to_string(), "plain".to_string()],
            vec!["2.0".to_string(), "a,b".to_string()],
            vec!["3.0".to_string(), "say \"hi\"".to_string()],
            vec!["4.0".to_string(), "two\nlines".to_string()],
        ];
        let text = csv_encode(&rows);
        let lines: Vec<&str> = text.split("\r\n").collect();
        assert_eq!(lines[0], "t,label");
        assert_eq!(lines[1], "1.0,plain");
        assert_eq!(lines[2], "2.0,\"a,b\"");
        assert_eq!(lines[3], "3.0,\"say \"\"hi\"\"\"");
        assert!(lines[4].starts_with("4.0,\"two"));
        assert!(text.ends_with("\r\n"));
    }

    #[test]
    fn plot_renders_finite_geometry() {
        let plot = Plot {
            title: "min R vs t".into(),
            x_label: "t".into(),
            y_label: "min R".into(),
            series: vec![
                Series {
                    label: "run".into(),
                    points: (0..20).map(|k| (k as f64 * 0.1, (k as f64 * 0.3).sin())).collect(),
                },
                Series {
                    label: "bound & more".into(),
                    points: vec![(0.0, -1.0), (2.0, f64::NAN), (1.9, -0.5)],
                },
            ],
        };
        let svg = plot.svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("&amp; more"));
        assert!(!svg.contains("NaN"));
        assert_eq!(svg.matches("<circle").count(), 22);
        assert_eq!(plot.svg(), svg);
    }

    #[test]
    fn degenerate_ranges_still_render() {
        let plot = Plot {
            title: "flat".into(),
            x_label: "t".into(),
            y_label: "v".into(),
            series: vec![Series {
                label: "zero".into(),
                points: vec![(1.0, 0.0), (1.0, 0.0)],
            }],
        };
        let svg = plot.svg();
        assert!(svg.contains("</svg>"));
        assert!(!svg.contains("inf") && !svg.contains("NaN"));
    }
}
