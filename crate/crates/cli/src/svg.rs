//! Minimal SVG line plots for 1D transmission profiles.

pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
    pub color: &'a str,
    pub dashed: bool,
}

/// Render profiles over the pixel index as an SVG document.
pub fn profile_svg(series: &[Series<'_>]) -> String {
    let (w, h) = (640.0, 360.0);
    let (ml, mr, mt, mb) = (50.0, 15.0, 15.0, 35.0);
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let ymax = series
        .iter()
        .flat_map(|s| s.values.iter())
        .fold(1.0f64, |a, &v| a.max(v))
        * 1.05;
    let sx = |i: usize| ml + (w - ml - mr) * i as f64 / (n - 1) as f64;
    let sy = |v: f64| h - mb - (h - mt - mb) * (v / ymax);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{ml}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{ml}\" y=\"{ylab}\" font-size=\"12\">pixel index</text>\n",
        y0 = h - mb,
        x1 = w - mr,
        ylab = h - 10.0,
    );
    for s in series {
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", sx(i), sy(v)))
            .collect();
        let dash = if s.dashed { " stroke-dasharray=\"6,4\"" } else { "" };
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\"{} stroke-width=\"1.5\" points=\"{}\"/>\n",
            s.color,
            dash,
            pts.join(" ")
        ));
    }
    let mut ly = mt + 14.0;
    for s in series {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{ly}\" font-size=\"12\" fill=\"{}\">{}</text>\n",
            w - mr - 120.0,
            s.color,
            s.label
        ));
        ly += 16.0;
    }
    out.push_str("</svg>\n");
    out
}
