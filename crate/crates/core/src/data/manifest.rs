use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Photo,
    Sketch,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Photo => "photo",
            Modality::Sketch => "sketch",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "photo" => Ok(Modality::Photo),
            "sketch" => Ok(Modality::Sketch),
            other => Err(format!("unknown modality '{other}'")),
        }
    }
}

/// One image with its identity label and eye landmarks in source pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub identity: String,
    pub modality: Modality,
    pub image_path: PathBuf,
    pub left_eye: (f64, f64),
    pub right_eye: (f64, f64),
}

/// A list of records plus, for paired data, the photo/sketch record of each
/// identity (as indices into `records`).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub pairing: BTreeMap<String, (usize, usize)>,
}

impl Manifest {
    /// Strict paired manifest: exactly one photo and one sketch per identity.
    pub fn paired(records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let e = seen.entry(r.identity.as_str()).or_default();
            match r.modality {
                Modality::Photo => e.0.push(i),
                Modality::Sketch => e.1.push(i),
            }
        }
        let mut pairing = BTreeMap::new();
        for (id, (p, s)) in &seen {
            if p.len() != 1 || s.len() != 1 {
                return Err(Error::Pairing {
                    identity: id.to_string(),
                    msg: format!("{} photo and {} sketch records (need exactly 1 each)", p.len(), s.len()),
                });
            }
            pairing.insert(id.to_string(), (p[0], s[0]));
        }
        Ok(Self { records, pairing })
    }

    /// Photo-only manifest (several photos per identity allowed).
    pub fn photo_only(records: Vec<SampleRecord>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.modality != Modality::Photo) {
            return Err(Error::Pairing {
                identity: r.identity.clone(),
                msg: "sketch record in a photo-only manifest".into(),
            });
        }
        Ok(Self {
            records,
            pairing: BTreeMap::new(),
        })
    }

    /// Any records; pairs the first photo with the first sketch of each
    /// identity that has both.
    pub fn catalog(records: Vec<SampleRecord>) -> Self {
        let mut first: BTreeMap<String, (Option<usize>, Option<usize>)> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let e = first.entry(r.identity.clone()).or_default();
            match r.modality {
                Modality::Photo => {
                    e.0.get_or_insert(i);
                }
                Modality::Sketch => {
                    e.1.get_or_insert(i);
                }
            }
        }
        let pairing = first
            .into_iter()
            .filter_map(|(id, (p, s))| Some((id, (p?, s?))))
            .collect();
        Self { records, pairing }
    }

    pub fn is_photo_only(&self) -> bool {
        self.records.iter().all(|r| r.modality == Modality::Photo)
    }

    /// Distinct identities in label order.
    pub fn identities(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.identity.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn pair(&self, identity: &str) -> Option<(&SampleRecord, &SampleRecord)> {
        self.pairing
            .get(identity)
            .map(|&(p, s)| (&self.records[p], &self.records[s]))
    }

    /// Pairs in identity order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &SampleRecord, &SampleRecord)> {
        self.pairing
            .iter()
            .map(|(id, &(p, s))| (id.as_str(), &self.records[p], &self.records[s]))
    }

    pub fn photos(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.modality == Modality::Photo)
    }

    /// Paired sub-manifest restricted to `identities`.
    pub fn paired_subset(&self, identities: &[String]) -> Result<Self> {
        let mut records = Vec::with_capacity(identities.len() * 2);
        for id in identities {
            let (p, s) = self.pair(id).ok_or_else(|| Error::Pairing {
                identity: id.clone(),
                msg: "identity has no photo/sketch pair".into(),
            })?;
            records.push(p.clone());
            records.push(s.clone());
        }
        Self::paired(records)
    }

    /// Photo-only sub-manifest of the paired photos of `identities`.
    pub fn photo_subset(&self, identities: &[String]) -> Result<Self> {
        let records = identities
            .iter()
            .map(|id| {
                self.pair(id).map(|(p, _)| p.clone()).ok_or_else(|| Error::Pairing {
                    identity: id.clone(),
                    msg: "identity has no photo/sketch pair".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::photo_only(records)
    }
}

fn parse_point(s: &str) -> Option<(f64, f64)> {
    let (x, y) = s.split_once(',')?;
    let p: (f64, f64) = (x.trim().parse().ok()?, y.trim().parse().ok()?);
    (p.0.is_finite() && p.1.is_finite()).then_some(p)
}

/// Reads a tab-separated manifest
/// (`identity, modality, relative_path, lx,ly, rx,ry`; `#` comments).
///
/// A manifest containing only photos is photo-only; otherwise it must be
/// strictly paired. Image paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let records = read_records(path)?;
    if records.iter().all(|r| r.modality == Modality::Photo) {
        Manifest::photo_only(records)
    } else {
        Manifest::paired(records)
    }
}

/// Reads a manifest with any number of images per identity and modality.
pub fn load_catalog(path: &Path) -> Result<Manifest> {
    Ok(Manifest::catalog(read_records(path)?))
}

/// Parses manifest lines without checking pairing.
pub fn read_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let identity = fields[0].trim();
        if identity.is_empty() {
            return Err(bad("empty identity".into()));
        }
        let modality: Modality = fields[1].trim().parse().map_err(bad)?;
        let rel = fields[2].trim();
        if rel.is_empty() {
            return Err(bad("empty image path".into()));
        }
        let left_eye = parse_point(fields[3]).ok_or_else(|| bad(format!("bad eye point '{}'", fields[3])))?;
        let right_eye = parse_point(fields[4]).ok_or_else(|| bad(format!("bad eye point '{}'", fields[4])))?;
        records.push(SampleRecord {
            identity: identity.to_string(),
            modality,
            image_path: base.join(rel),
            left_eye,
            right_eye,
        });
    }
    if records.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 0,
            msg: "no records".into(),
        });
    }
    Ok(records)
}

/// Writes records with paths relative to the manifest's directory when possible.
pub fn write_manifest(records: &[SampleRecord], path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = String::from("# identity\tmodality\tpath\tleft_eye\tright_eye\n");
    for r in records {
        let rel = r.image_path.strip_prefix(base).unwrap_or(&r.image_path);
        out.push_str(&format!(
            "{}\t{}\t{}\t{},{}\t{},{}\n",
            r.identity,
            r.modality,
            rel.to_string_lossy(),
            r.left_eye.0,
            r.left_eye.1,
            r.right_eye.0,
            r.right_eye.1
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("m.tsv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn paired_manifest() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "# header\nA\tphoto\ta.png\t10,20\t30,20\nA\tsketch\tas.png\t10,20\t30,20\n\
             B\tphoto\tb.png\t10,20\t30,20\nB\tsketch\tbs.png\t11,20\t31,20\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.pairing.len(), 2);
        assert_eq!(m.records.len(), 4);
        let (ph, sk) = m.pair("B").unwrap();
        assert_eq!(ph.modality, Modality::Photo);
        assert_eq!(sk.right_eye, (31.0, 20.0));
        assert_eq!(ph.image_path, d.path().join("b.png"));
    }

    #[test]
    fn duplicate_photo_is_pairing_error() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "A\tphoto\ta.png\t1,2\t3,2\nA\tphoto\ta2.png\t1,2\t3,2\nA\tsketch\ts.png\t1,2\t3,2\n",
        );
        match load_manifest(&p) {
            Err(Error::Pairing { identity, .. }) => assert_eq!(identity, "A"),
            other => panic!("expected pairing error, got {other:?}"),
        }
    }

    #[test]
    fn photo_only_manifest() {
        let d = tempfile::tempdir().unwrap();
        let body: String = (0..10)
            .map(|i| format!("id{}\tphoto\tp{i}.png\t1,2\t3,2\n", i % 3))
            .collect();
        let m = load_manifest(&write(d.path(), &body)).unwrap();
        assert!(m.pairing.is_empty());
        assert_eq!(m.records.len(), 10);
        assert!(m.is_photo_only());
        assert_eq!(m.identities().len(), 3);
    }

    #[test]
    fn malformed_line_is_named() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "A\tphoto\ta.png\t1,2\t3,2\nB\tphoto\tb.png\t1;2\t3,2\n");
        match load_manifest(&p) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected manifest error, got {other:?}"),
        }
        let p = write(d.path(), "A\tvideo\ta.png\t1,2\t3,2\n");
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { line: 1, .. })));
    }

    #[test]
    fn write_then_load() {
        let d = tempfile::tempdir().unwrap();
        let recs = vec![SampleRecord {
            identity: "X".into(),
            modality: Modality::Photo,
            image_path: d.path().join("img/x.png"),
            left_eye: (1.5, 2.25),
            right_eye: (9.0, 2.25),
        }];
        let p = d.path().join("out.tsv");
        write_manifest(&recs, &p).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.records, recs);
    }
}
