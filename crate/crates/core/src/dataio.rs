//! On-disk datasets.
//!
//! ```text
//! root/classes.cfg               class table (TOML)
//! root/manifest.cfg              sequences, frame files, split (TOML)
//! root/seq_000/frame_0000.img    RGB frame, PNG-encoded
//! root/seq_000/label_0000.img    single-channel class ids, PNG-encoded
//! ```
//!
//! A CamVid-style directory (`frames/*.png`, colour label images
//! `labels/<stem>_L.png` for the annotated subset, and `classes.cfg`) can be
//! imported as one sequence with [`load_camvid`].

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassId, ClassInfo, ClassTable, Frame, Image, LabelMap, VideoSequence};

pub const CLASSES_FILE: &str = "classes.cfg";
pub const MANIFEST_FILE: &str = "manifest.cfg";
const FORMAT: &str = "vidseg-dataset 1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    /// Single-channel images holding class ids.
    #[default]
    Id,
    /// RGB images holding class colours.
    Color,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassEntry {
    id: ClassId,
    name: String,
    color: [u8; 3],
    #[serde(default)]
    unknown: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassFile {
    #[serde(default)]
    label_encoding: LabelEncoding,
    class: Vec<ClassEntry>,
}

/// Parse a class-table file, returning the table and its label encoding.
pub fn parse_class_file(text: &str) -> Result<(ClassTable, LabelEncoding)> {
    let file: ClassFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let unknown: Vec<ClassId> = file
        .class
        .iter()
        .filter(|c| c.unknown)
        .map(|c| c.id)
        .collect();
    let [unknown] = unknown[..] else {
        return Err(Error::ClassTable(format!(
            "exactly one class must be marked unknown, found {}",
            unknown.len()
        )));
    };
    let classes = file
        .class
        .into_iter()
        .map(|c| ClassInfo {
            id: c.id,
            name: c.name,
            color: c.color,
        })
        .collect();
    Ok((ClassTable::new(classes, unknown)?, file.label_encoding))
}

pub fn class_file_text(table: &ClassTable, encoding: LabelEncoding) -> String {
    let file = ClassFile {
        label_encoding: encoding,
        class: table
            .classes()
            .iter()
            .map(|c| ClassEntry {
                id: c.id,
                name: c.name.clone(),
                color: c.color,
                unknown: table.is_unknown(c.id),
            })
            .collect(),
    };
    toml::to_string(&file).expect("class file serializes")
}

pub fn load_class_file(path: &Path) -> Result<(ClassTable, LabelEncoding)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_class_file(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    timestamp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceEntry {
    id: String,
    frame_rate: f64,
    #[serde(default)]
    frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    #[serde(default)]
    split: Split,
    #[serde(default)]
    sequence: Vec<SequenceEntry>,
}

/// A loaded dataset. `ids[i]` names `sequences[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub table: ClassTable,
    pub ids: Vec<String>,
    pub sequences: Vec<VideoSequence>,
    pub split: Split,
}

impl Dataset {
    fn indices(&self, names: &[String]) -> Vec<usize> {
        names
            .iter()
            .filter_map(|n| self.ids.iter().position(|i| i == n))
            .collect()
    }

    pub fn train(&self) -> Vec<&VideoSequence> {
        self.indices(&self.split.train)
            .into_iter()
            .map(|i| &self.sequences[i])
            .collect()
    }

    pub fn test(&self) -> Vec<&VideoSequence> {
        self.indices(&self.split.test)
            .into_iter()
            .map(|i| &self.sequences[i])
            .collect()
    }
}

pub fn sequence_id(index: usize) -> String {
    format!("seq_{index:03}")
}

pub fn frame_file(t: usize) -> String {
    format!("frame_{t:04}.img")
}

pub fn label_file(t: usize) -> String {
    format!("label_{t:04}.img")
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = img.dims();
    let d = img.data();
    let buf = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([
            to_u8(d[[0, y, x]]),
            to_u8(d[[1, y, x]]),
            to_u8(d[[2, y, x]]),
        ])
    });
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

pub fn write_label(path: &Path, labels: &LabelMap) -> Result<()> {
    let (h, w) = labels.dims();
    let buf = GrayImage::from_raw(w as u32, h as u32, labels.as_slice().to_vec())
        .expect("buffer matches dims");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

/// Colour rendering of a label map using the table's colours.
pub fn write_label_color(path: &Path, labels: &LabelMap, table: &ClassTable) -> Result<()> {
    let (h, w) = labels.dims();
    let buf = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let id = labels.get(y as usize, x as usize);
        image::Rgb(table.info(id).map_or([0, 0, 0], |c| c.color))
    });
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_image(path: &Path) -> Result<Image> {
    let rgb = decode(path)?.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
    });
    Image::new(data)
}

/// Read a label image. Ids (or colours) outside the table are an error
/// unless `lenient`, in which case they become the unknown class.
pub fn read_label(
    path: &Path,
    table: &ClassTable,
    encoding: LabelEncoding,
    lenient: bool,
) -> Result<LabelMap> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(w * h);
    match encoding {
        LabelEncoding::Id => {
            let g = img.into_luma8();
            for (i, &id) in g.as_raw().iter().enumerate() {
                if table.contains(id) {
                    data.push(id);
                } else if lenient {
                    data.push(table.unknown_id());
                } else {
                    return Err(Error::ClassId {
                        id,
                        reason: format!(
                            "pixel (row {}, col {}) of {} is not in the class table",
                            i / w,
                            i % w,
                            path.display()
                        ),
                    });
                }
            }
        }
        LabelEncoding::Color => {
            let rgb = img.into_rgb8();
            for (i, p) in rgb.pixels().enumerate() {
                match table.id_of_color(p.0) {
                    Some(id) => data.push(id),
                    None if lenient => data.push(table.unknown_id()),
                    None => {
                        return Err(Error::UnmappedColor {
                            r: p[0],
                            g: p[1],
                            b: p[2],
                            row: i / w,
                            col: i % w,
                            path: path.to_path_buf(),
                        })
                    }
                }
            }
        }
    }
    LabelMap::new(h, w, data)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Write `sequences` under `root` with ids `seq_000, seq_001, ...` and
/// return the manifest path. Split entries must name those ids.
pub fn save_dataset(
    sequences: &[VideoSequence],
    table: &ClassTable,
    split: &Split,
    root: &Path,
) -> Result<PathBuf> {
    create_dir(root)?;
    let ids: Vec<String> = (0..sequences.len()).map(sequence_id).collect();
    check_split(split, &ids)?;
    let mut entries = Vec::with_capacity(sequences.len());
    for (id, seq) in ids.iter().zip(sequences) {
        let dir = root.join(id);
        create_dir(&dir)?;
        let mut frames = Vec::with_capacity(seq.len());
        for (t, f) in seq.frames.iter().enumerate() {
            let image = format!("{id}/{}", frame_file(t));
            write_image(&root.join(&image), &f.image)?;
            let label = match &f.label {
                Some(l) => {
                    let name = format!("{id}/{}", label_file(t));
                    write_label(&root.join(&name), l)?;
                    Some(name)
                }
                None => None,
            };
            frames.push(FrameEntry {
                image,
                label,
                timestamp: f.timestamp,
            });
        }
        entries.push(SequenceEntry {
            id: id.clone(),
            frame_rate: seq.frame_rate,
            frames,
        });
    }
    let classes = root.join(CLASSES_FILE);
    fs::write(&classes, class_file_text(table, LabelEncoding::Id))
        .map_err(|e| Error::io(&classes, e))?;
    let manifest = Manifest {
        format: FORMAT.into(),
        split: split.clone(),
        sequence: entries,
    };
    let path = root.join(MANIFEST_FILE);
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn check_split(split: &Split, ids: &[String]) -> Result<()> {
    let known: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    for name in split.train.iter().chain(&split.test) {
        if !known.contains(name.as_str()) {
            return Err(Error::Config(format!(
                "split names unknown sequence '{name}'"
            )));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::Config(format!(
                "sequence '{name}' appears twice in the split"
            )));
        }
    }
    Ok(())
}

/// Load a dataset from its manifest (or the directory holding it).
pub fn load_dataset(manifest: &Path, lenient: bool) -> Result<Dataset> {
    let manifest = if manifest.is_dir() {
        manifest.join(MANIFEST_FILE)
    } else {
        manifest.to_path_buf()
    };
    let root = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let m: Manifest =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;
    if m.format != FORMAT {
        return Err(Error::Config(format!(
            "{}: unsupported format '{}', expected '{FORMAT}'",
            manifest.display(),
            m.format
        )));
    }
    let (table, encoding) = load_class_file(&root.join(CLASSES_FILE))?;
    let ids: Vec<String> = m.sequence.iter().map(|s| s.id.clone()).collect();
    if ids.iter().collect::<HashSet<_>>().len() != ids.len() {
        return Err(Error::Config("duplicate sequence id in manifest".into()));
    }
    check_split(&m.split, &ids)?;
    let mut sequences = Vec::with_capacity(m.sequence.len());
    for entry in &m.sequence {
        let mut frames = Vec::with_capacity(entry.frames.len());
        for f in &entry.frames {
            let image = read_image(&root.join(&f.image))?;
            let label = match &f.label {
                Some(l) => Some(read_label(&root.join(l), &table, encoding, lenient)?),
                None => None,
            };
            if let (Some(l), Some(first)) = (&label, frames.first().map(|f: &Frame| f.image.dims()))
            {
                if l.dims() != first {
                    return Err(Error::Shape(format!(
                        "{}: label size differs from the sequence frames",
                        f.image
                    )));
                }
            }
            frames.push(Frame {
                image,
                label,
                timestamp: f.timestamp,
            });
        }
        check_dims(&entry.id, &frames)?;
        sequences.push(VideoSequence {
            frames,
            frame_rate: entry.frame_rate,
        });
    }
    Ok(Dataset {
        table,
        ids,
        sequences,
        split: m.split,
    })
}

fn check_dims(id: &str, frames: &[Frame]) -> Result<()> {
    let Some(first) = frames.first().map(|f| f.image.dims()) else {
        return Ok(());
    };
    for (t, f) in frames.iter().enumerate() {
        if f.image.dims() != first || f.label.as_ref().is_some_and(|l| l.dims() != first) {
            return Err(Error::Shape(format!(
                "sequence {id}, frame {t}: size differs from frame 0 ({}x{})",
                first.0, first.1
            )));
        }
    }
    Ok(())
}

/// Import a CamVid-style directory as a single sequence: every
/// `frames/*.png` in name order, timestamps `t / frame_rate`, and a colour
/// label `labels/<stem>_L.png` where one exists.
pub fn load_camvid(
    dir: &Path,
    frame_rate: f64,
    lenient: bool,
) -> Result<(ClassTable, VideoSequence)> {
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(Error::InvalidArgument("frame rate must be positive".into()));
    }
    let (table, _) = load_class_file(&dir.join(CLASSES_FILE))?;
    let frames_dir = dir.join("frames");
    let mut names: Vec<PathBuf> = fs::read_dir(&frames_dir)
        .map_err(|e| Error::io(&frames_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Empty(format!(
            "no .png frames in {}",
            frames_dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(names.len());
    for (t, p) in names.iter().enumerate() {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let lp = dir.join("labels").join(format!("{stem}_L.png"));
        let label = if lp.exists() {
            Some(read_label(&lp, &table, LabelEncoding::Color, lenient)?)
        } else {
            None
        };
        frames.push(Frame {
            image: read_image(p)?,
            label,
            timestamp: t as f64 / frame_rate,
        });
    }
    check_dims("camvid", &frames)?;
    Ok((table, VideoSequence { frames, frame_rate }))
}

/// Pixel count of every scored class over all labels of a sequence.
pub fn class_histogram(seq: &VideoSequence, table: &ClassTable) -> Vec<u64> {
    let mut h = vec![0u64; table.num_scored()];
    for l in seq.labels() {
        for &id in l.as_slice() {
            if let Some(c) = table.channel_of(id) {
                h[c] += 1;
            }
        }
    }
    h
}

fn l1_normalized(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let norm = |v: f64, s: f64| if s > 0.0 { v / s } else { 0.0 };
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (norm(x, sa) - norm(y, sb)).abs())
        .sum()
}

/// L1 distance between the normalised class histograms of two index sets.
pub fn histogram_distance(hists: &[Vec<u64>], a: &[usize], b: &[usize]) -> f64 {
    let sum = |idx: &[usize]| -> Vec<f64> {
        let mut s = vec![0.0; hists.first().map_or(0, Vec::len)];
        for &i in idx {
            for (acc, &v) in s.iter_mut().zip(&hists[i]) {
                *acc += v as f64;
            }
        }
        s
    };
    l1_normalized(&sum(a), &sum(b))
}

/// Index-based train/test assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl IndexSplit {
    pub fn named(&self, ids: &[String]) -> Split {
        Split {
            train: self.train.iter().map(|&i| ids[i].clone()).collect(),
            test: self.test.iter().map(|&i| ids[i].clone()).collect(),
        }
    }
}

/// Greedy split with similar class distributions.
///
/// Sequences are visited in a seeded random order. Each goes to the side
/// that minimises the L1 distance between the two normalised histograms
/// projected to completion, where every still-open slot is filled with the
/// mean histogram of the unvisited sequences. Ties go to train.
pub fn split_by_distribution(
    sequences: &[VideoSequence],
    table: &ClassTable,
    train_fraction: f64,
    seed: u64,
) -> Result<IndexSplit> {
    let n = sequences.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "splitting needs at least 2 sequences".into(),
        ));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "train fraction must lie strictly between 0 and 1".into(),
        ));
    }
    let want_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let want_test = n - want_train;
    let hists: Vec<Vec<f64>> = sequences
        .iter()
        .map(|s| {
            class_histogram(s, table)
                .into_iter()
                .map(|v| v as f64)
                .collect()
        })
        .collect();
    let k = table.num_scored();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = IndexSplit {
        train: Vec::new(),
        test: Vec::new(),
    };
    let (mut train_h, mut test_h) = (vec![0.0; k], vec![0.0; k]);
    for (pos, &i) in order.iter().enumerate() {
        let rest = &order[pos + 1..];
        let mut mean = vec![0.0; k];
        for &j in rest {
            for (m, v) in mean.iter_mut().zip(&hists[j]) {
                *m += v / rest.len() as f64;
            }
        }
        let project = |to_train: bool| -> f64 {
            let (nt, ns) = (
                split.train.len() + usize::from(to_train),
                split.test.len() + usize::from(!to_train),
            );
            let fill = |base: &[f64], have: usize, want: usize, add: bool| -> Vec<f64> {
                let open = want.saturating_sub(have) as f64;
                base.iter()
                    .zip(&hists[i])
                    .zip(&mean)
                    .map(|((b, h), m)| b + if add { *h } else { 0.0 } + open * m)
                    .collect()
            };
            l1_normalized(
                &fill(&train_h, nt, want_train, to_train),
                &fill(&test_h, ns, want_test, !to_train),
            )
        };
        let to_train = if split.train.len() == want_train {
            false
        } else if split.test.len() == want_test {
            true
        } else {
            project(true) <= project(false)
        };
        let (side, h) = if to_train {
            (&mut split.train, &mut train_h)
        } else {
            (&mut split.test, &mut test_h)
        };
        side.push(i);
        for (a, v) in h.iter_mut().zip(&hists[i]) {
            *a += v;
        }
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Write predicted label maps in the dataset layout: `dir/seq_id/label_tttt.img`.
pub fn save_predictions(dir: &Path, predictions: &BTreeMap<String, Vec<LabelMap>>) -> Result<()> {
    for (id, labels) in predictions {
        let sub = dir.join(id);
        create_dir(&sub)?;
        for (t, l) in labels.iter().enumerate() {
            write_label(&sub.join(label_file(t)), l)?;
        }
    }
    Ok(())
}

/// Read predictions for `frames` frames of sequence `id` from `dir`.
pub fn load_predictions(
    dir: &Path,
    id: &str,
    frames: usize,
    table: &ClassTable,
) -> Result<Vec<LabelMap>> {
    (0..frames)
        .map(|t| {
            read_label(
                &dir.join(id).join(label_file(t)),
                table,
                LabelEncoding::Id,
                false,
            )
        })
        .collect()
}
