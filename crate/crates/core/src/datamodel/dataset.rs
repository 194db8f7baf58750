//! In-memory dataset and the on-disk feature/annotation formats.
//!
//! Feature file (little-endian):
//!
//! ```text
//! "LRTDFEAT" | u32 version = 1 | u32 num_videos
//! per video: u16 name_len | name (UTF-8) | u32 F | u32 D | F·D × f32 (row-major)
//! ```
//!
//! Annotation file: UTF-8 TSV with header
//! `video_id\tframe_index\tphase\toutlier_flag`, one row per frame, frame
//! indices starting at 0.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"LRTDFEAT";
pub const FEATURE_VERSION: u32 = 1;
pub const ANNOTATION_HEADER: &str = "video_id\tframe_index\tphase\toutlier_flag";

/// One 1-fps timestep of a video.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub feature: Vec<f64>,
    pub phase: usize,
    /// Synthetic side channel marking injected outlier frames. Never read by models.
    pub outlier: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub frames: Vec<FrameRecord>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn phases(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.phase).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub videos: Vec<Video>,
    pub feature_dim: usize,
    pub num_phases: usize,
}

impl Dataset {
    /// Checks contiguity, dimension and phase-range invariants.
    pub fn validate(&self) -> Result<()> {
        for v in &self.videos {
            for (i, f) in v.frames.iter().enumerate() {
                if f.frame_index != i {
                    return Err(Error::invalid(format!(
                        "video {}: frame {} has index {}",
                        v.id, i, f.frame_index
                    )));
                }
                if f.feature.len() != self.feature_dim {
                    return Err(Error::invalid(format!(
                        "video {} frame {}: feature dimension {} != {}",
                        v.id,
                        i,
                        f.feature.len(),
                        self.feature_dim
                    )));
                }
                if f.phase >= self.num_phases {
                    return Err(Error::invalid(format!(
                        "video {} frame {}: phase {} >= {}",
                        v.id, i, f.phase, self.num_phases
                    )));
                }
            }
        }
        let mut ids: Vec<&str> = self.videos.iter().map(|v| v.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate video id {}", w[0])));
        }
        Ok(())
    }

    pub fn video(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn video_index(&self, id: &str) -> Option<usize> {
        self.videos.iter().position(|v| v.id == id)
    }

    pub fn num_frames(&self) -> usize {
        self.videos.iter().map(Video::len).sum()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} videos, {} frames, D={}, P={}",
            self.videos.len(),
            self.num_frames(),
            self.feature_dim,
            self.num_phases
        )
    }
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, path: &Path, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::parse_byte(path, self.offset, format!("truncated while reading {what}: {e}")))?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u16(&mut self, path: &Path, what: &str) -> Result<u16> {
        let b = self.bytes(path, 2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, path: &Path, what: &str) -> Result<u32> {
        let b = self.bytes(path, 4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct RawVideo {
    name: String,
    dim: usize,
    values: Vec<f32>,
}

fn read_features(path: &Path) -> Result<Vec<RawVideo>> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut cur = Cursor {
        inner: BufReader::new(file),
        offset: 0,
    };
    let magic = cur.bytes(path, 8, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(Error::parse_byte(path, 0, "bad magic, expected LRTDFEAT"));
    }
    let version = cur.u32(path, "version")?;
    if version != FEATURE_VERSION {
        return Err(Error::parse_byte(path, 8, format!("unsupported version {version}")));
    }
    let n = cur.u32(path, "video count")? as usize;
    let mut videos = Vec::with_capacity(n);
    for _ in 0..n {
        let name_at = cur.offset;
        let len = cur.u16(path, "name length")? as usize;
        let name = String::from_utf8(cur.bytes(path, len, "video name")?)
            .map_err(|_| Error::parse_byte(path, name_at, "video name is not UTF-8"))?;
        let frames = cur.u32(path, "frame count")? as usize;
        let dim = cur.u32(path, "feature dimension")? as usize;
        if dim == 0 {
            return Err(Error::parse_byte(path, cur.offset - 4, "feature dimension is 0"));
        }
        let raw = cur.bytes(path, frames * dim * 4, "feature payload")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse_byte(
                path,
                cur.offset - raw.len() as u64 + 4 * pos as u64,
                format!("non-finite feature in video {name}"),
            ));
        }
        videos.push(RawVideo { name, dim, values });
    }
    let mut probe = [0u8; 1];
    if cur.inner.read(&mut probe).map_err(|e| Error::io("read features", e))? != 0 {
        return Err(Error::parse_byte(path, cur.offset, "trailing bytes after last video"));
    }
    Ok(videos)
}

struct Annotation {
    phase: usize,
    outlier: bool,
}

fn read_annotations(path: &Path, num_phases: usize) -> Result<Vec<(String, Vec<Annotation>)>> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io("read annotations", e))?,
        None => return Err(Error::parse_line(path, 1, "empty annotation file")),
    };
    if header.trim_end_matches('\r') != ANNOTATION_HEADER {
        return Err(Error::parse_line(
            path,
            1,
            format!(
                "malformed header, expected `{}`",
                ANNOTATION_HEADER.replace('\t', "\\t")
            ),
        ));
    }
    let mut out: Vec<(String, Vec<Annotation>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io("read annotations", e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse_line(
                path,
                lineno,
                format!("expected 4 columns, got {}", cols.len()),
            ));
        }
        let frame: usize = cols[1]
            .parse()
            .map_err(|_| Error::parse_line(path, lineno, format!("bad frame_index `{}`", cols[1])))?;
        let phase: usize = cols[2]
            .parse()
            .map_err(|_| Error::parse_line(path, lineno, format!("bad phase `{}`", cols[2])))?;
        if phase >= num_phases {
            return Err(Error::parse_line(
                path,
                lineno,
                format!("phase {phase} out of range for P={num_phases}"),
            ));
        }
        let outlier = match cols[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse_line(
                    path,
                    lineno,
                    format!("outlier_flag must be 0 or 1, got `{other}`"),
                ))
            }
        };
        let video = cols[0];
        if out.last().map(|(v, _)| v.as_str()) != Some(video) {
            if out.iter().any(|(v, _)| v == video) {
                return Err(Error::parse_line(
                    path,
                    lineno,
                    format!("rows for video {video} are not contiguous"),
                ));
            }
            out.push((video.to_string(), Vec::new()));
        }
        let rows = &mut out.last_mut().expect("pushed above").1;
        if frame != rows.len() {
            return Err(Error::parse_line(
                path,
                lineno,
                format!(
                    "video {video}: frame_index {frame} breaks contiguity (expected {})",
                    rows.len()
                ),
            ));
        }
        rows.push(Annotation { phase, outlier });
    }
    Ok(out)
}

/// Loads and cross-validates a feature file and its annotation file.
pub fn load_dataset(
    feature_path: impl AsRef<Path>,
    annotation_path: impl AsRef<Path>,
    num_phases: usize,
) -> Result<Dataset> {
    let (fpath, apath) = (feature_path.as_ref(), annotation_path.as_ref());
    if num_phases == 0 {
        return Err(Error::invalid("num_phases must be positive"));
    }
    let features = read_features(fpath)?;
    let annotations = read_annotations(apath, num_phases)?;

    let feature_dim = features.first().map(|v| v.dim).unwrap_or(0);
    if let Some(v) = features.iter().find(|v| v.dim != feature_dim) {
        return Err(Error::parse_byte(
            fpath,
            0,
            format!("video {} has D={} but dataset D={feature_dim}", v.name, v.dim),
        ));
    }
    if features.len() != annotations.len() {
        return Err(Error::invalid(format!(
            "{} videos in features but {} in annotations",
            features.len(),
            annotations.len()
        )));
    }

    let mut videos = Vec::with_capacity(features.len());
    for (raw, (ann_id, ann)) in features.into_iter().zip(annotations) {
        if raw.name != ann_id {
            return Err(Error::invalid(format!(
                "video order differs: features have {} where annotations have {ann_id}",
                raw.name
            )));
        }
        let count = raw.values.len() / raw.dim;
        if count != ann.len() {
            return Err(Error::invalid(format!(
                "video {}: {} feature frames but {} annotation rows",
                raw.name,
                count,
                ann.len()
            )));
        }
        let frames = raw
            .values
            .chunks_exact(raw.dim)
            .zip(ann)
            .enumerate()
            .map(|(i, (feat, a))| FrameRecord {
                frame_index: i,
                feature: feat.iter().map(|&v| f64::from(v)).collect(),
                phase: a.phase,
                outlier: a.outlier,
            })
            .collect();
        videos.push(Video { id: raw.name, frames });
    }
    let ds = Dataset {
        videos,
        feature_dim,
        num_phases,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the two dataset files. Features are narrowed to `f32`.
pub fn write_dataset(
    dataset: &Dataset,
    feature_path: impl AsRef<Path>,
    annotation_path: impl AsRef<Path>,
) -> Result<()> {
    dataset.validate()?;
    let (fpath, apath) = (feature_path.as_ref(), annotation_path.as_ref());
    let io = |e| Error::io(format!("write {}", fpath.display()), e);
    let mut w = BufWriter::new(File::create(fpath).map_err(io)?);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(dataset.videos.len() as u32).to_le_bytes()).map_err(io)?;
    for v in &dataset.videos {
        let name = v.id.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("video id too long: {}", v.id)))?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        w.write_all(&(v.frames.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(dataset.feature_dim as u32).to_le_bytes()).map_err(io)?;
        for f in &v.frames {
            for &x in &f.feature {
                w.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;

    let io = |e| Error::io(format!("write {}", apath.display()), e);
    let mut w = BufWriter::new(File::create(apath).map_err(io)?);
    writeln!(w, "{ANNOTATION_HEADER}").map_err(io)?;
    for v in &dataset.videos {
        for f in &v.frames {
            writeln!(w, "{}\t{}\t{}\t{}", v.id, f.frame_index, f.phase, u8::from(f.outlier)).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(frames: usize, dim: usize) -> Dataset {
        let frames = (0..frames)
            .map(|i| FrameRecord {
                frame_index: i,
                feature: (0..dim).map(|d| (i * dim + d) as f64 * 0.5).collect(),
                phase: i % 3,
                outlier: i == 4,
            })
            .collect();
        Dataset {
            videos: vec![Video {
                id: "video01".into(),
                frames,
            }],
            feature_dim: dim,
            num_phases: 7,
        }
    }

    #[test]
    fn twelve_frame_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (f, a) = (dir.path().join("f.bin"), dir.path().join("a.tsv"));
        let ds = fixture(12, 4);
        write_dataset(&ds, &f, &a).unwrap();
        let back = load_dataset(&f, &a, 7).unwrap();
        assert_eq!(back.videos[0].frames.len(), 12);
        assert_eq!(back, ds);
        assert_eq!(back.summary(), "1 videos, 12 frames, D=4, P=7");
    }

    #[test]
    fn phase_out_of_range_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let (f, a) = (dir.path().join("f.bin"), dir.path().join("a.tsv"));
        write_dataset(&fixture(3, 2), &f, &a).unwrap();
        let text = std::fs::read_to_string(&a)
            .unwrap()
            .replace("video01\t2\t2\t0", "video01\t2\t9\t0");
        std::fs::write(&a, text).unwrap();
        let err = load_dataset(&f, &a, 7).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn frame_count_mismatch_names_the_video() {
        let dir = tempfile::tempdir().unwrap();
        let (f, a) = (dir.path().join("f.bin"), dir.path().join("a.tsv"));
        write_dataset(&fixture(100, 2), &f, &a).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        let trimmed: Vec<&str> = text.lines().take(100).collect();
        std::fs::write(&a, trimmed.join("\n") + "\n").unwrap();
        let err = load_dataset(&f, &a, 7).unwrap_err().to_string();
        assert!(
            err.contains("video01") && err.contains("100") && err.contains("99"),
            "{err}"
        );
    }

    #[test]
    fn malformed_header_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let (f, a) = (dir.path().join("f.bin"), dir.path().join("a.tsv"));
        write_dataset(&fixture(4, 2), &f, &a).unwrap();
        let good = std::fs::read_to_string(&a).unwrap();

        std::fs::write(&a, good.replace("outlier_flag", "flag")).unwrap();
        assert!(load_dataset(&f, &a, 7).unwrap_err().to_string().contains("header"));

        std::fs::write(&a, good.replace("video01\t2\t", "video01\t5\t")).unwrap();
        assert!(load_dataset(&f, &a, 7).unwrap_err().to_string().contains("contiguity"));

        let mut bytes = std::fs::read(&f).unwrap();
        bytes[0] = b'X';
        std::fs::write(&f, &bytes).unwrap();
        std::fs::write(&a, &good).unwrap();
        assert!(load_dataset(&f, &a, 7).unwrap_err().to_string().contains("magic"));
    }
}
