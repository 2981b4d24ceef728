use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CnnModel, HeadKind, NnetError, C1, C2, C3, HIDDEN, TENSORS};
use crate::terrain::{COLS, ROWS};

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn dims_field() -> String {
    format!("input={ROWS}x{COLS} conv={C1},{C2},{C3} pool=2 fc={HIDDEN},{HIDDEN}")
}

pub(crate) fn to_text(model: &CnnModel) -> String {
    let mut s = format!(
        "# skillsel-cnn format_version={MODEL_FORMAT_VERSION} head_kind={} {}\n",
        model.head_kind,
        dims_field()
    );
    for (i, t) in TENSORS.iter().enumerate() {
        let _ = write!(s, "{},{}", t.name, t.len);
        for v in model.tensor(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub(crate) fn from_text(text: &str) -> Result<CnnModel, NnetError> {
    let bad = |line: usize, reason: String| NnetError::Malformed { line, reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let body = header
        .strip_prefix("# skillsel-cnn ")
        .ok_or_else(|| bad(1, "missing `# skillsel-cnn` header".into()))?;
    let mut version = None;
    let mut head = None;
    for field in body.split_whitespace() {
        match field.split_once('=') {
            Some(("format_version", v)) => version = Some(v.to_string()),
            Some(("head_kind", v)) => head = Some(v.parse::<HeadKind>().map_err(|e| bad(1, e))?),
            _ => {}
        }
    }
    let version = version.ok_or_else(|| bad(1, "missing format_version".into()))?;
    if version != MODEL_FORMAT_VERSION.to_string() {
        return Err(NnetError::VersionMismatch { expected: MODEL_FORMAT_VERSION, found: version });
    }
    let head = head.ok_or_else(|| bad(1, "missing head_kind".into()))?;
    let dims = dims_field();
    if !dims.split_whitespace().all(|d| body.split_whitespace().any(|f| f == d)) {
        return Err(bad(1, format!("layer dimensions differ from `{dims}`")));
    }

    let mut model = CnnModel::zeros(head);
    for (i, t) in TENSORS.iter().enumerate() {
        let line_no = i + 2;
        let line = lines.next().ok_or_else(|| bad(line_no, format!("missing tensor `{}`", t.name)))?;
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or_default();
        if name != t.name {
            return Err(bad(line_no, format!("expected tensor `{}`, found `{name}`", t.name)));
        }
        let len: usize = fields
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(line_no, "unreadable length field".into()))?;
        if len != t.len {
            return Err(bad(line_no, format!("length field {len} does not match expected {}", t.len)));
        }
        let dst = model.tensor_mut(i);
        let mut count = 0;
        for (k, f) in fields.enumerate() {
            if k >= len {
                return Err(bad(line_no, format!("more than {len} values")));
            }
            dst[k] = f.parse().map_err(|_| bad(line_no, format!("bad value `{f}`")))?;
            count += 1;
        }
        if count != len {
            return Err(bad(line_no, format!("{count} values, length field says {len}")));
        }
    }
    if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
        return Err(bad(TENSORS.len() + 2, format!("unexpected trailing record `{:.20}`", extra)));
    }
    Ok(model)
}

pub fn save_model(model: &CnnModel, path: &Path) -> Result<(), NnetError> {
    fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<CnnModel, NnetError> {
    from_text(&fs::read_to_string(path)?)
}
