use std::collections::HashMap;
use std::path::Path;

use crate::error::LabelError;

/// Class index per sample id.
///
/// The CSV form is a `sample_id,label` header followed by one row per
/// sample. Lines starting with `#` are comments; a comment of the form
/// `# num_classes=K` fixes the class count instead of inferring `1 + max`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTable {
    entries: Vec<(String, usize)>,
    index: HashMap<String, usize>,
    num_classes: usize,
}

impl LabelTable {
    /// Builds a table. `num_classes` of `None` infers `1 + max label`.
    pub fn new(
        entries: Vec<(String, usize)>,
        num_classes: Option<usize>,
    ) -> Result<Self, LabelError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (id, _)) in entries.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(LabelError::DuplicateId {
                    line: i + 1,
                    id: id.clone(),
                });
            }
        }
        let inferred = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        let num_classes = num_classes.unwrap_or(inferred);
        if let Some(&(_, label)) = entries.iter().find(|e| e.1 >= num_classes) {
            return Err(LabelError::OutOfRange { label, num_classes });
        }
        Ok(LabelTable {
            entries,
            index,
            num_classes,
        })
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, usize)>,
    ) -> Result<Self, LabelError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, l)| (id.to_string(), l))
                .collect(),
            None,
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|&i| self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, usize)] {
        &self.entries
    }

    /// Labels for `ids` in order; every id must be present.
    pub fn lookup(&self, ids: &[String]) -> Result<Vec<usize>, LabelError> {
        ids.iter()
            .map(|id| self.get(id).ok_or_else(|| LabelError::Missing(id.clone())))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, LabelError> {
        let mut declared = None;
        let mut header_seen = false;
        let mut entries = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("num_classes=") {
                    let k = v.trim().parse::<usize>().map_err(|_| LabelError::Row {
                        line: line_no,
                        reason: format!("cannot parse num_classes from {v:?}"),
                    })?;
                    declared = Some(k);
                }
                continue;
            }
            if !header_seen {
                if line != "sample_id,label" {
                    return Err(LabelError::Header {
                        line: line_no,
                        found: line.to_string(),
                    });
                }
                header_seen = true;
                continue;
            }
            let (id, label) = line.split_once(',').ok_or_else(|| LabelError::Row {
                line: line_no,
                reason: format!("expected two comma-separated fields, found {line:?}"),
            })?;
            let id = id.trim();
            if id.is_empty() {
                return Err(LabelError::Row {
                    line: line_no,
                    reason: "empty sample id".into(),
                });
            }
            let label: i64 = label.trim().parse().map_err(|_| LabelError::Row {
                line: line_no,
                reason: format!("cannot parse label {:?}", label.trim()),
            })?;
            if label < 0 {
                return Err(LabelError::NegativeLabel {
                    line: line_no,
                    label,
                });
            }
            if seen.insert(id.to_string(), line_no).is_some() {
                return Err(LabelError::DuplicateId {
                    line: line_no,
                    id: id.to_string(),
                });
            }
            entries.push((id.to_string(), label as usize));
        }
        if !header_seen {
            return Err(LabelError::Header {
                line: 1,
                found: String::new(),
            });
        }
        Self::new(entries, declared)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# num_classes={}\nsample_id,label\n", self.num_classes);
        for (id, l) in &self.entries {
            out.push_str(&format!("{id},{l}\n"));
        }
        out
    }
}

pub fn read_labels(path: &Path) -> Result<LabelTable, LabelError> {
    let text = std::fs::read_to_string(path).map_err(|source| LabelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    LabelTable::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infers_num_classes() {
        let t = LabelTable::parse("sample_id,label\na,0\nb,2\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.num_classes(), 3);
        assert_eq!(t.get("b"), Some(2));
    }

    #[test]
    fn header_comment_overrides_num_classes() {
        let t = LabelTable::parse("# num_classes=10\nsample_id,label\na,0\n").unwrap();
        assert_eq!(t.num_classes(), 10);
        assert!(LabelTable::parse("# num_classes=2\nsample_id,label\na,5\n").is_err());
    }

    #[test]
    fn duplicate_id_reports_line() {
        let e = LabelTable::parse("sample_id,label\na,0\na,1\n").unwrap_err();
        assert!(
            matches!(e, LabelError::DuplicateId { line: 3, .. }),
            "{e:?}"
        );
    }

    #[test]
    fn empty_body_is_empty_table() {
        let t = LabelTable::parse("sample_id,label\n").unwrap();
        assert!(t.is_empty());
        assert_eq!(t.num_classes(), 0);
    }

    #[test]
    fn negative_and_garbage_rows() {
        assert!(matches!(
            LabelTable::parse("sample_id,label\na,-1\n").unwrap_err(),
            LabelError::NegativeLabel { line: 2, label: -1 }
        ));
        assert!(matches!(
            LabelTable::parse("sample_id,label\na,0\nb;1\n").unwrap_err(),
            LabelError::Row { line: 3, .. }
        ));
        assert!(matches!(
            LabelTable::parse("sample_id,label\na,x\n").unwrap_err(),
            LabelError::Row { line: 2, .. }
        ));
        assert!(matches!(
            LabelTable::parse("id,y\n").unwrap_err(),
            LabelError::Header { line: 1, .. }
        ));
    }

    #[test]
    fn csv_round_trip() {
        let t = LabelTable::parse("sample_id,label\nx,1\ny,0\n").unwrap();
        assert_eq!(LabelTable::parse(&t.to_csv()).unwrap(), t);
    }
}
