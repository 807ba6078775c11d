//! JSON-lines IO for every pipeline artifact, plus atomic single-file
//! writes for manifests.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use procforge_core::corpus::ParallelRecord;
use procforge_core::label::LabeledCandidate;

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.with_context(|| format!("read {}:{}", path.display(), i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line)
            .with_context(|| format!("parse {}:{}", path.display(), i + 1))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("create dir {}", parent.display()))?;
        }
    }
    let file = fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Write via a temporary sibling then rename, so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("create dir {}", parent.display()))?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("rename into {}", path.display()))?;
    Ok(())
}

/// Corpus records need their derived char counts restored after reading.
pub fn read_corpus(path: &Path) -> Result<Vec<ParallelRecord>> {
    let mut records: Vec<ParallelRecord> = read_jsonl(path)?;
    for r in &mut records {
        r.refresh_counts();
    }
    Ok(records)
}

/// Label artifacts need their step indices restored after reading.
pub fn read_labeled(path: &Path) -> Result<Vec<LabeledCandidate>> {
    let mut rows: Vec<LabeledCandidate> = read_jsonl(path)?;
    for row in &mut rows {
        row.refresh_indices();
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use procforge_core::corpus::TheoremRecord;

    #[test]
    fn corpus_roundtrip_preserves_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let record = ParallelRecord::new(
            TheoremRecord::new(
                "X.lean#0".into(),
                "X.lean".into(),
                "import Mathlib".into(),
                "theorem t : 1 = 1".into(),
                "rfl".into(),
            ),
            "a question long enough".into(),
            "an answer".into(),
        );
        write_jsonl(&path, &[record.clone()]).unwrap();

        let raw = fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(raw.trim()).unwrap();
        let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        let mut expected =
            vec!["id", "source_path", "env", "statement", "proof", "nl_question", "nl_answer"];
        expected.sort_unstable();
        assert_eq!(keys, expected);

        let back = read_corpus(&path).unwrap();
        assert_eq!(back, vec![record]);
        assert!(back[0].char_count_nl > 0, "counts recomputed on read");
    }

    #[test]
    fn label_rows_use_the_training_artifact_schema() {
        use procforge_core::label::{
            label_process, segment_proof, LabeledCandidate,
        };
        use procforge_core::repl::{CompilationResult, CompileStatus, Diagnostic, Severity};

        let body = "theorem t : 1 = 1 := by\n  intro h\n  exact h";
        let steps = segment_proof(body);
        let result = CompilationResult {
            candidate_id: "c#0".into(),
            status: CompileStatus::Failed,
            diagnostics: vec![Diagnostic {
                severity: Severity::Error,
                line: 3,
                column: 2,
                message: "boom".into(),
            }],
            env_line_offset: 0,
            elapsed_ms: 1,
        };
        let labels = label_process(&steps, &result).unwrap();
        let row = LabeledCandidate::new(steps, labels);

        let json = serde_json::to_value(&row).unwrap();
        let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["candidate_id", "first_error_step", "labels", "scheme", "steps"]
        );
        assert_eq!(json["scheme"], "process");
        assert_eq!(json["labels"][0], "correct");
        assert_eq!(json["labels"][1], "incorrect");
        let mut step_keys: Vec<&str> = json["steps"][0]
            .as_object()
            .unwrap()
            .keys()
            .map(|s| s.as_str())
            .collect();
        step_keys.sort_unstable();
        assert_eq!(step_keys, ["line_end", "line_start", "text"]);

        // round-trip through a file restores indices
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        write_jsonl(&path, &[row.clone()]).unwrap();
        let back = read_labeled(&path).unwrap();
        assert_eq!(back[0].steps[1].index, 1);
        assert_eq!(back, vec![row]);
    }
}
