//! Labels, events and DCASE-style TSV manifests.

mod toy;

pub use toy::{synth_toy_dataset, toy_clip, ToyArchetype, ToyDataset, ToySpec};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::{CLIP_SECONDS, FRAME_SECONDS};

/// Ordered class vocabulary; the order fixes the model output columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    labels: Vec<String>,
}

impl ClassMap {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("class list is empty"));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::config("duplicate class label"));
        }
        if labels
            .iter()
            .any(|l| l.is_empty() || l.contains(['\t', ',', '\n']))
        {
            return Err(Error::config(
                "class labels must be non-empty without tabs or commas",
            ));
        }
        Ok(ClassMap { labels })
    }

    /// The ten domestic event classes of the DESED dataset.
    pub fn desed() -> Self {
        let labels = [
            "Alarm_bell_ringing",
            "Blender",
            "Cat",
            "Dishes",
            "Dog",
            "Electric_shaver_toothbrush",
            "Frying",
            "Running_water",
            "Speech",
            "Vacuum_cleaner",
        ];
        ClassMap::new(labels.map(String::from).to_vec()).expect("static list is valid")
    }

    pub fn parse(list: &str) -> Result<Self> {
        ClassMap::new(
            list.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))
    }

    pub fn to_list(&self) -> String {
        self.labels.join(",")
    }
}

/// A labelled time span within a clip, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub label: String,
    pub onset: f64,
    pub offset: f64,
}

impl Event {
    pub fn new(label: impl Into<String>, onset: f64, offset: f64) -> Result<Self> {
        let label = label.into();
        if !(onset >= 0.0 && onset < offset && offset <= CLIP_SECONDS + 1e-9) {
            return Err(Error::InvalidEvent(format!(
                "`{label}` [{onset}, {offset}] outside 0 <= onset < offset <= {CLIP_SECONDS}"
            )));
        }
        Ok(Event {
            label,
            onset,
            offset,
        })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// First frame covered by `onset` and one past the last frame covered by
/// `offset`, at 640 frames per 10 s.
pub fn event_frames(onset: f64, offset: f64, n_frames: usize) -> (usize, usize) {
    let start = ((onset / FRAME_SECONDS) + 1e-9).floor().max(0.0) as usize;
    let end = ((offset / FRAME_SECONDS) - 1e-9).ceil().max(0.0) as usize;
    (start.min(n_frames), end.min(n_frames))
}

/// Frames x classes binary target built from strong events.
pub fn frame_labels(events: &[Event], classes: &ClassMap, n_frames: usize) -> Result<Array2<u8>> {
    let mut y = Array2::zeros((n_frames, classes.len()));
    for e in events {
        let c = classes.index_of(&e.label)?;
        let (a, b) = event_frames(e.onset, e.offset, n_frames);
        for f in a..b {
            y[[f, c]] = 1;
        }
    }
    Ok(y)
}

/// Clip-level tag vector.
pub fn tag_vector<'a>(
    tags: impl IntoIterator<Item = &'a String>,
    classes: &ClassMap,
) -> Result<Vec<f64>> {
    let mut y = vec![0.0; classes.len()];
    for t in tags {
        y[classes.index_of(t)?] = 1.0;
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    Strong,
    Weak,
    Unlabeled,
}

impl ManifestKind {
    fn header(self) -> &'static str {
        match self {
            ManifestKind::Strong => "filename\tonset\toffset\tevent_label",
            ManifestKind::Weak => "filename\tevent_labels",
            ManifestKind::Unlabeled => "filename",
        }
    }
}

/// One manifest row. Strong rows carry one label and a span; weak rows one
/// or more labels; unlabeled rows only the filename.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub filename: String,
    pub onset: Option<f64>,
    pub offset: Option<f64>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub kind: ManifestKind,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn strong(clips: &BTreeMap<String, Vec<Event>>) -> Self {
        let rows = clips
            .iter()
            .flat_map(|(f, evs)| {
                evs.iter().map(move |e| ManifestRow {
                    filename: f.clone(),
                    onset: Some(e.onset),
                    offset: Some(e.offset),
                    labels: vec![e.label.clone()],
                })
            })
            .collect();
        Manifest {
            kind: ManifestKind::Strong,
            rows,
        }
    }

    pub fn weak(tags: &BTreeMap<String, BTreeSet<String>>) -> Self {
        let rows = tags
            .iter()
            .map(|(f, t)| ManifestRow {
                filename: f.clone(),
                onset: None,
                offset: None,
                labels: t.iter().cloned().collect(),
            })
            .collect();
        Manifest {
            kind: ManifestKind::Weak,
            rows,
        }
    }

    pub fn unlabeled<S: AsRef<str>>(files: &[S]) -> Self {
        let rows = files
            .iter()
            .map(|f| ManifestRow {
                filename: f.as_ref().to_string(),
                onset: None,
                offset: None,
                labels: vec![],
            })
            .collect();
        Manifest {
            kind: ManifestKind::Unlabeled,
            rows,
        }
    }

    /// Distinct filenames in first-appearance order.
    pub fn filenames(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.filename.clone()))
            .map(|r| r.filename.clone())
            .collect()
    }

    /// Strong rows grouped by clip, events sorted by onset. Rows with an
    /// empty label mark clips without events.
    pub fn events_by_clip(&self) -> Result<BTreeMap<String, Vec<Event>>> {
        let mut out: BTreeMap<String, Vec<Event>> = BTreeMap::new();
        for r in &self.rows {
            let entry = out.entry(r.filename.clone()).or_default();
            if let (Some(on), Some(off), Some(label)) = (r.onset, r.offset, r.labels.first()) {
                entry.push(Event::new(label.clone(), on, off)?);
            }
        }
        for evs in out.values_mut() {
            evs.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.label.cmp(&b.label)));
        }
        Ok(out)
    }

    /// Clip tags: weak labels, or the distinct strong labels per clip.
    pub fn tags_by_clip(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.filename.clone())
                .or_default()
                .extend(r.labels.iter().cloned());
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(self.kind.header());
        s.push('\n');
        for r in &self.rows {
            match self.kind {
                ManifestKind::Strong => match (r.onset, r.offset) {
                    (Some(on), Some(off)) => writeln!(
                        s,
                        "{}\t{on:.3}\t{off:.3}\t{}",
                        r.filename,
                        r.labels.first().map(String::as_str).unwrap_or("")
                    ),
                    _ => writeln!(s, "{}\t\t\t", r.filename),
                },
                ManifestKind::Weak => writeln!(s, "{}\t{}", r.filename, r.labels.join(",")),
                ManifestKind::Unlabeled => writeln!(s, "{}", r.filename),
            }
            .expect("writing to a String");
        }
        s
    }

    pub fn parse(text: &str, kind: ManifestKind, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == kind.header() => {}
            Some((_, h)) => {
                return Err(err(
                    1,
                    format!("expected header `{}`, got `{h}`", kind.header()),
                ))
            }
            None => return Err(err(1, "empty manifest".into())),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let filename = cols[0].trim().to_string();
            if filename.is_empty() {
                return Err(err(ln, "missing filename".into()));
            }
            let row = match kind {
                ManifestKind::Strong => {
                    if cols.len() != 4 {
                        return Err(err(ln, format!("expected 4 columns, got {}", cols.len())));
                    }
                    if cols[1].trim().is_empty()
                        && cols[2].trim().is_empty()
                        && cols[3].trim().is_empty()
                    {
                        ManifestRow {
                            filename,
                            onset: None,
                            offset: None,
                            labels: vec![],
                        }
                    } else {
                        let num = |s: &str, what: &str| {
                            s.trim()
                                .parse::<f64>()
                                .map_err(|_| err(ln, format!("bad {what} `{s}`")))
                        };
                        let (on, off) = (num(cols[1], "onset")?, num(cols[2], "offset")?);
                        let label = cols[3].trim().to_string();
                        Event::new(label.clone(), on, off).map_err(|e| err(ln, e.to_string()))?;
                        ManifestRow {
                            filename,
                            onset: Some(on),
                            offset: Some(off),
                            labels: vec![label],
                        }
                    }
                }
                ManifestKind::Weak => {
                    if cols.len() != 2 {
                        return Err(err(ln, format!("expected 2 columns, got {}", cols.len())));
                    }
                    let labels: Vec<String> = cols[1]
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                    if labels.is_empty() {
                        return Err(err(ln, "weak row without labels".into()));
                    }
                    ManifestRow {
                        filename,
                        onset: None,
                        offset: None,
                        labels,
                    }
                }
                ManifestKind::Unlabeled => {
                    if cols.len() != 1 {
                        return Err(err(ln, "unlabeled rows carry only a filename".into()));
                    }
                    ManifestRow {
                        filename,
                        onset: None,
                        offset: None,
                        labels: vec![],
                    }
                }
            };
            rows.push(row);
        }
        Ok(Manifest { kind, rows })
    }
}

pub fn read_manifest(path: impl AsRef<Path>, kind: ManifestKind) -> Result<Manifest> {
    let path = path.as_ref();
    Manifest::parse(&fs::read_to_string(path)?, kind, path)
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, m.to_tsv())?;
    Ok(())
}

/// Resolve a manifest filename against an audio directory.
pub fn audio_path(dir: &Path, filename: &str) -> PathBuf {
    dir.join(filename)
}
