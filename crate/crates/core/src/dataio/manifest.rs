use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["image_path", "label", "mask_path", "split", "role"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Validation(format!("unknown split `{s}` (train, val, test)"))),
        }
    }
}

/// How an image takes part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Has a ground-truth infection mask.
    SeedMasked,
    /// Has a class label; its mask comes from pseudo-labelling.
    Unlabeled,
    /// Class label only; never pseudo-labelled.
    LabeledOnly,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::SeedMasked => "seed-masked",
            Role::Unlabeled => "unlabeled",
            Role::LabeledOnly => "labeled-only",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seed-masked" => Ok(Role::SeedMasked),
            "unlabeled" => Ok(Role::Unlabeled),
            "labeled-only" => Ok(Role::LabeledOnly),
            _ => Err(Error::Validation(format!(
                "unknown role `{s}` (seed-masked, unlabeled, labeled-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub image_path: String,
    pub label: u8,
    pub mask_path: Option<String>,
    pub split: Split,
    pub role: Role,
}

/// Parsed manifest plus the directory relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn image_path(&self, row: &ManifestRow) -> PathBuf {
        self.resolve(&row.image_path)
    }

    pub fn mask_path(&self, row: &ManifestRow) -> Option<PathBuf> {
        row.mask_path.as_deref().map(|m| self.resolve(m))
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Writes the canonical form.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, manifest_to_string(&self.rows)).map_err(|e| Error::io(path, e))
    }
}

fn row_err(line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("manifest line {line}: {msg}"))
}

/// Parses manifest text; errors name the offending line.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut header_seen = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_err(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if !header_seen {
            if rec.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
                return Err(row_err(line, format!("header must be `{}`", MANIFEST_HEADER.join(","))));
            }
            header_seen = true;
            continue;
        }
        if rec.len() != 5 {
            return Err(row_err(line, format!("expected 5 fields, found {}", rec.len())));
        }
        let image_path = rec[0].trim().to_string();
        if image_path.is_empty() {
            return Err(row_err(line, "empty image_path"));
        }
        let label = match rec[1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(row_err(line, format!("label `{other}` is not 0 or 1"))),
        };
        let mask_path = Some(rec[2].trim().to_string()).filter(|m| !m.is_empty());
        let split = rec[3].trim().parse().map_err(|e: Error| row_err(line, e))?;
        let role: Role = rec[4].trim().parse().map_err(|e: Error| row_err(line, e))?;
        if role == Role::SeedMasked && mask_path.is_none() {
            return Err(row_err(line, "seed-masked row has no mask_path"));
        }
        rows.push(ManifestRow {
            image_path,
            label,
            mask_path,
            split,
            role,
        });
    }
    if !header_seen {
        return Err(row_err(1, "missing header"));
    }
    Ok(rows)
}

/// Loads a manifest and checks that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_manifest(&text)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = Manifest { dir, rows };
    for (i, row) in m.rows.iter().enumerate() {
        for p in std::iter::once(m.image_path(row)).chain(m.mask_path(row)) {
            if !p.is_file() {
                return Err(Error::io(
                    &p,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("referenced by manifest line {} does not exist", i + 2),
                    ),
                ));
            }
        }
    }
    Ok(m)
}

/// Canonical text: header, one row per line, `\n` endings.
pub fn manifest_to_string(rows: &[ManifestRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER).expect("in-memory write");
    for r in rows {
        let label = r.label.to_string();
        w.write_record([
            r.image_path.as_str(),
            label.as_str(),
            r.mask_path.as_deref().unwrap_or(""),
            r.split.as_str(),
            r.role.as_str(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "image_path,label,mask_path,split,role\n";

    #[test]
    fn parses_basic_row() {
        let rows = parse_manifest(&format!("{HEAD}img/a.png,1,,train,unlabeled\n")).unwrap();
        assert_eq!(
            rows[0],
            ManifestRow {
                image_path: "img/a.png".into(),
                label: 1,
                mask_path: None,
                split: Split::Train,
                role: Role::Unlabeled,
            }
        );
    }

    #[test]
    fn seed_row_without_mask_names_line() {
        let text = format!("{HEAD}a.pgm,0,,train,unlabeled\nb.pgm,1,,train,seed-masked\n");
        let e = parse_manifest(&text).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn malformed_rows() {
        for bad in ["a.pgm,2,,train,unlabeled", "a.pgm,1,,dev,unlabeled", "a.pgm,1,,train", "a.pgm,1,,train,other"] {
            let e = parse_manifest(&format!("{HEAD}{bad}\n")).unwrap_err();
            assert!(e.to_string().contains("line 2"), "{e}");
        }
        assert!(parse_manifest("path,label\n").is_err());
        assert!(parse_manifest("").is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let text = format!("{HEAD}a.pgm,1,m/a.pgm,train,seed-masked\n\"b,c.pgm\",0,,test,labeled-only\n");
        let rows = parse_manifest(&text).unwrap();
        assert_eq!(manifest_to_string(&rows), text);
        assert_eq!(rows[1].image_path, "b,c.pgm");
    }

    #[test]
    fn dangling_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, format!("{HEAD}missing.pgm,0,,train,unlabeled\n")).unwrap();
        let e = load_manifest(&p).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
        assert!(e.to_string().contains("line 2"));
        assert!(matches!(load_manifest(&dir.path().join("nope.csv")), Err(Error::Io { .. })));
    }
}
