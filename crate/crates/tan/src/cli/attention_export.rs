//! Attention-weight export: CSV, SVG grid, or a terminal shade grid.
//!
//! Canonical layout everywhere: tokens as columns, topics as rows; each
//! topic row sums to 1 over the real tokens.

use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "lowercase")]
pub enum Render {
    Csv,
    Svg,
    Term,
}

#[derive(Clone, Debug)]
pub struct AttentionExport {
    pub tokens: Vec<String>,
    /// topics × tokens.
    pub alpha: Tensor<f32>,
}

impl AttentionExport {
    pub fn new(tokens: Vec<String>, alpha: Tensor<f32>) -> Self {
        assert_eq!(alpha.cols(), tokens.len());
        AttentionExport { tokens, alpha }
    }

    pub fn render(&self, render: Render) -> String {
        match render {
            Render::Csv => self.to_csv(),
            Render::Svg => self.to_svg(),
            Render::Term => self.to_term(),
        }
    }

    /// Header row of tokens, then one row of weights per topic. Weights
    /// are printed with the shortest round-trip float formatting, so a
    /// parse of the CSV recovers them exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("topic");
        for token in &self.tokens {
            out.push(',');
            out.push_str(&csv_escape(token));
        }
        out.push('\n');
        for r in 0..self.alpha.rows() {
            out.push_str(&format!("topic_{r}"));
            for &a in self.alpha.row(r) {
                out.push(',');
                out.push_str(&format!("{a}"));
            }
            out.push('\n');
        }
        out
    }

    /// SVG 1.1 shaded grid; every cell carries its weight in a `<title>`
    /// element with the same formatting as the CSV.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 56;
        const LEFT: usize = 84;
        const TOP: usize = 40;
        let width = LEFT + CELL * self.tokens.len();
        let height = TOP + CELL * self.alpha.rows();
        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
             viewBox=\"0 0 {width} {height}\" width=\"{width}\" height=\"{height}\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        for (c, token) in self.tokens.iter().enumerate() {
            let x = LEFT + c * CELL + CELL / 2;
            out.push_str(&format!(
                "<text x=\"{x}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
                TOP - 10,
                xml_escape(token)
            ));
        }
        for r in 0..self.alpha.rows() {
            let y = TOP + r * CELL + CELL / 2 + 4;
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{y}\" font-size=\"12\" text-anchor=\"end\">topic_{r}</text>\n",
                LEFT - 8
            ));
            for (c, &a) in self.alpha.row(r).iter().enumerate() {
                let x = LEFT + c * CELL;
                let y = TOP + r * CELL;
                let shade = (255.0 * (1.0 - f64::from(a))).round() as u8;
                out.push_str(&format!(
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                     fill=\"rgb({shade},{shade},255)\" stroke=\"gray\">\
                     <title>{a}</title></rect>\n"
                ));
            }
        }
        out.push_str("</svg>\n");
        out
    }

    pub fn to_term(&self) -> String {
        const SHADES: [char; 5] = [' ', '░', '▒', '▓', '█'];
        let token_width = self.tokens.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        let col = token_width.max(5) + 1;
        let mut out = String::from(&" ".repeat(9));
        for token in &self.tokens {
            out.push_str(&format!("{token:<col$}"));
        }
        out.push('\n');
        for r in 0..self.alpha.rows() {
            out.push_str(&format!("topic_{r:<3}"));
            for &a in self.alpha.row(r) {
                let bucket = ((f64::from(a) * 4.0).round() as usize).min(4);
                let cell = format!("{} {:.2}", SHADES[bucket], a);
                out.push_str(&format!("{cell:<col$}"));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
