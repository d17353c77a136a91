use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    /// The three assignable splits, in index order.
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" | "" => Ok(Split::Unassigned),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

/// A run of temporally adjacent images taken at one place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub event_id: String,
    pub class_index: usize,
    /// Paths relative to the manifest directory, in temporal order.
    pub image_refs: Vec<PathBuf>,
    pub split: Split,
}

impl EventRecord {
    pub fn len(&self) -> usize {
        self.image_refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_refs.is_empty()
    }
}

/// Images and events of one class in each split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassSplitCounts {
    pub images: [usize; 3],
    pub events: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory the image paths are relative to.
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub events: Vec<EventRecord>,
}

const HEADER: [&str; 4] = ["image_path", "class_name", "event_id", "split"];

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, class_names: Vec<String>, events: Vec<EventRecord>) -> Result<Self> {
        let manifest = DatasetManifest {
            root: root.into(),
            class_names,
            events,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for e in &self.events {
            if e.image_refs.is_empty() {
                return Err(Error::Manifest(format!("event `{}` has no images", e.event_id)));
            }
            if e.class_index >= self.class_names.len() {
                return Err(Error::Manifest(format!("event `{}` has an unknown class", e.event_id)));
            }
            if seen.insert(e.event_id.as_str(), ()).is_some() {
                return Err(Error::Manifest(format!("event id `{}` appears twice", e.event_id)));
            }
        }
        Ok(())
    }

    /// Reads `image_path,class_name,event_id,split` rows. Classes are
    /// numbered in order of first appearance and rows of one event are kept
    /// in file order.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != HEADER {
            return Err(Error::Manifest(format!("expected header {HEADER:?}, found {header:?}")));
        }
        let mut class_names: Vec<String> = Vec::new();
        let mut events: Vec<EventRecord> = Vec::new();
        let mut by_id: HashMap<String, usize> = HashMap::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 2;
            let [image, class, event, split] = [0, 1, 2, 3].map(|i| record.get(i).unwrap_or(""));
            if image.is_empty() || class.is_empty() || event.is_empty() {
                return Err(Error::Format {
                    line,
                    reason: "empty field".into(),
                });
            }
            let split: Split = split.parse().map_err(|e: Error| Error::Format {
                line,
                reason: e.to_string(),
            })?;
            let class_index = match class_names.iter().position(|c| c == class) {
                Some(i) => i,
                None => {
                    class_names.push(class.to_string());
                    class_names.len() - 1
                }
            };
            match by_id.get(event) {
                Some(&i) => {
                    let e = &mut events[i];
                    if e.class_index != class_index || e.split != split {
                        return Err(Error::Manifest(format!("line {line}: event `{event}` mixes classes or splits")));
                    }
                    e.image_refs.push(PathBuf::from(image));
                }
                None => {
                    by_id.insert(event.to_string(), events.len());
                    events.push(EventRecord {
                        event_id: event.to_string(),
                        class_index,
                        image_refs: vec![PathBuf::from(image)],
                        split,
                    });
                }
            }
        }
        Self::new(root, class_names, events)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(HEADER)?;
        for e in &self.events {
            for image in &e.image_refs {
                let image = image.to_string_lossy();
                writer.write_record([&*image, &self.class_names[e.class_index], &e.event_id, e.split.as_str()])?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_images(&self) -> usize {
        self.events.iter().map(EventRecord::len).sum()
    }

    pub fn image_count(&self, split: Split) -> usize {
        self.events.iter().filter(|e| e.split == split).map(EventRecord::len).sum()
    }

    pub fn event_count(&self, split: Split) -> usize {
        self.events.iter().filter(|e| e.split == split).count()
    }

    /// Images per class within `split`.
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for e in self.events.iter().filter(|e| e.split == split) {
            counts[e.class_index] += e.len();
        }
        counts
    }

    pub fn split_counts(&self) -> Vec<ClassSplitCounts> {
        let mut counts = vec![ClassSplitCounts::default(); self.num_classes()];
        for e in &self.events {
            if let Some(s) = Split::ASSIGNED.iter().position(|&s| s == e.split) {
                counts[e.class_index].images[s] += e.len();
                counts[e.class_index].events[s] += 1;
            }
        }
        counts
    }

    /// `(absolute image path, class index)` for every image of `split`, in
    /// manifest order.
    pub fn samples(&self, split: Split) -> Vec<(PathBuf, usize)> {
        self.events
            .iter()
            .filter(|e| e.split == split)
            .flat_map(|e| e.image_refs.iter().map(|p| (self.root.join(p), e.class_index)))
            .collect()
    }

    /// Per-class image and event counts for each split, one row per class
    /// plus a total row.
    pub fn write_stats(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record([
            "class",
            "train_images",
            "train_events",
            "val_images",
            "val_events",
            "test_images",
            "test_events",
        ])?;
        let counts = self.split_counts();
        let mut total = ClassSplitCounts::default();
        let row = |name: &str, c: &ClassSplitCounts| {
            let mut r = vec![name.to_string()];
            for s in 0..3 {
                r.push(c.images[s].to_string());
                r.push(c.events[s].to_string());
            }
            r
        };
        for (name, c) in self.class_names.iter().zip(&counts) {
            writer.write_record(row(name, c))?;
            for s in 0..3 {
                total.images[s] += c.images[s];
                total.events[s] += c.events[s];
            }
        }
        writer.write_record(row("total", &total))?;
        writer.flush()?;
        Ok(())
    }
}
