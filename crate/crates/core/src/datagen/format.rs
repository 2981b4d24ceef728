use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, DatagenError, DatasetKind, Sample, TerrainMeta};
use crate::simkernel::SkillId;
use crate::terrain::{Heightfield, CELLS, COLS, ROWS};

pub const DATASET_FORMAT_VERSION: u32 = 1;

pub(crate) fn to_text(ds: &Dataset) -> String {
    let mut s = format!(
        "# format_version={DATASET_FORMAT_VERSION},kind={},skill_id={},rows={ROWS},cols={COLS},count={},master_seed={}\n",
        ds.kind.name(),
        ds.skill_id,
        ds.samples.len(),
        ds.master_seed
    );
    for sample in &ds.samples {
        for v in &sample.heightfield.values {
            let _ = write!(s, "{v},");
        }
        let _ = writeln!(s, "{},{},{}", sample.label, sample.terrain.kind, sample.terrain.difficulty);
    }
    s
}

pub(crate) fn from_text(text: &str) -> Result<Dataset, DatagenError> {
    let bad = |line: usize, reason: String| DatagenError::Malformed { line, reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let body = header.strip_prefix('#').ok_or_else(|| bad(1, "header must start with `#`".into()))?;
    let mut fields = std::collections::BTreeMap::new();
    for f in body.trim().split(',') {
        let (k, v) = f.split_once('=').ok_or_else(|| bad(1, format!("header field `{f}` is not key=value")))?;
        fields.insert(k.trim(), v.trim());
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(1, format!("header lacks `{k}`")));
    let version = get("format_version")?;
    if version != DATASET_FORMAT_VERSION.to_string() {
        return Err(DatagenError::VersionMismatch { expected: DATASET_FORMAT_VERSION, found: version.to_string() });
    }
    let kind: DatasetKind = get("kind")?.parse().map_err(|e| bad(1, e))?;
    let num = |k: &str| -> Result<u64, DatagenError> {
        get(k)?.parse().map_err(|_| bad(1, format!("header field `{k}` is not an integer")))
    };
    if num("rows")? != ROWS as u64 || num("cols")? != COLS as u64 {
        return Err(bad(1, format!("heightfield shape must be {ROWS}x{COLS}")));
    }
    let skill_id = SkillId(
        get("skill_id")?.parse().map_err(|_| bad(1, "header field `skill_id` is not an integer".into()))?,
    );
    let count = num("count")? as usize;
    let master_seed = num("master_seed")?;

    let mut samples = Vec::with_capacity(count);
    for (k, line) in lines.by_ref().take(count).enumerate() {
        let line_no = k + 2;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != CELLS + 3 {
            return Err(bad(line_no, format!("record {k} has {} fields, expected {}", parts.len(), CELLS + 3)));
        }
        let mut values = [0.0; CELLS];
        for (v, p) in values.iter_mut().zip(&parts[..CELLS]) {
            *v = p.parse().map_err(|_| bad(line_no, format!("record {k}: bad height `{p}`")))?;
        }
        let label: f64 = parts[CELLS].parse().map_err(|_| bad(line_no, format!("record {k}: bad label")))?;
        let terrain_kind = parts[CELLS + 1].parse().map_err(|_| bad(line_no, format!("record {k}: bad terrain kind")))?;
        let difficulty: f64 =
            parts[CELLS + 2].parse().map_err(|_| bad(line_no, format!("record {k}: bad difficulty")))?;
        samples.push(Sample {
            heightfield: Heightfield::from_values(values),
            label,
            skill_id,
            terrain: TerrainMeta { kind: terrain_kind, difficulty },
        });
    }
    if samples.len() != count {
        return Err(bad(samples.len() + 2, format!("truncated: {} of {count} records", samples.len())));
    }
    if let Some((k, _)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
        return Err(bad(count + 2 + k, "records beyond the declared count".into()));
    }
    Ok(Dataset::new(kind, skill_id, master_seed, samples))
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatagenError> {
    fs::write(path, to_text(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatagenError> {
    from_text(&fs::read_to_string(path)?)
}
