//! Text mirror-model files: `cx=<f> cy=<f> radius_px=<f>`, whitespace or
//! newline separated.

use std::path::Path;

use anyhow::{bail, Context, Result};
use skywarp::MirrorModel;

pub fn format_model(m: &MirrorModel<f64>) -> String {
    let (cx, cy) = m.center();
    format!("cx={cx} cy={cy} radius_px={}\n", m.radius_px())
}

pub fn parse_model(text: &str) -> Result<MirrorModel<f64>> {
    let (mut cx, mut cy, mut r) = (None, None, None);
    for token in text.split_whitespace() {
        let (key, value) = token.split_once('=').with_context(|| format!("expected key=value, got {token:?}"))?;
        let value: f64 = value.parse().with_context(|| format!("bad number in {token:?}"))?;
        match key {
            "cx" => cx = Some(value),
            "cy" => cy = Some(value),
            "radius_px" => r = Some(value),
            other => bail!("unknown model key {other:?}"),
        }
    }
    match (cx, cy, r) {
        (Some(cx), Some(cy), Some(r)) => Ok(MirrorModel::new(r, (cx, cy))?),
        _ => bail!("model needs cx, cy and radius_px"),
    }
}

pub fn read_model(path: &Path) -> Result<MirrorModel<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    parse_model(&text).with_context(|| format!("parsing model {}", path.display()))
}

pub fn write_model(path: &Path, m: &MirrorModel<f64>) -> Result<()> {
    std::fs::write(path, format_model(m)).with_context(|| format!("writing model {}", path.display()))
}
