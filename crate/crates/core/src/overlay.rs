//! SVG overlays of a prediction on its image.

use std::fmt::Write;

use crate::geometry::{BoundingBox, ImageSize};

#[derive(Debug, Clone, Default)]
pub struct Overlay<'a> {
    /// href of the underlying image, omitted when empty.
    pub image_href: &'a str,
    pub prediction: Option<BoundingBox>,
    pub ground_truth: Option<BoundingBox>,
    pub candidates: &'a [BoundingBox],
    pub caption: &'a str,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn rect(out: &mut String, b: BoundingBox, class: &str, colour: &str, width: u32, dash: bool) {
    let dash = if dash { " stroke-dasharray=\"4 3\"" } else { "" };
    let _ = writeln!(
        out,
        "  <rect class=\"{class}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"{width}\"{dash}/>",
        b.x_min(),
        b.y_min(),
        b.width(),
        b.height()
    );
}

pub fn render_svg(size: ImageSize, overlay: &Overlay<'_>) -> String {
    let (w, h) = (size.width, size.height);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    if !overlay.image_href.is_empty() {
        let href = escape(overlay.image_href);
        let _ = writeln!(
            out,
            "  <image x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" href=\"{href}\" xlink:href=\"{href}\"/>"
        );
    }
    for &c in overlay.candidates {
        rect(&mut out, c, "candidate", "#f0c000", 1, true);
    }
    if let Some(gt) = overlay.ground_truth {
        rect(&mut out, gt, "ground-truth", "#00c000", 2, false);
    }
    if let Some(p) = overlay.prediction {
        rect(&mut out, p, "prediction", "#e00000", 3, false);
    }
    if !overlay.caption.is_empty() {
        let _ = writeln!(
            out,
            "  <text x=\"4\" y=\"16\" font-family=\"sans-serif\" font-size=\"14\" fill=\"#ffffff\" stroke=\"#000000\" stroke-width=\"0.5\">{}</text>",
            escape(overlay.caption)
        );
    }
    out.push_str("</svg>\n");
    out
}
