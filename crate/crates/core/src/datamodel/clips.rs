use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, FrameRecord, Video};
use crate::error::{Error, Result};
use crate::numkernel::Tensor;

/// `(video_id, end_frame_index)`. Ordered by video id, then end frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClipId {
    pub video_id: String,
    pub end: usize,
}

impl ClipId {
    pub fn new(video_id: impl Into<String>, end: usize) -> Self {
        ClipId {
            video_id: video_id.into(),
            end,
        }
    }
}

impl fmt::Display for ClipId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.video_id, self.end)
    }
}

impl FromStr for ClipId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (video, end) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::invalid(format!("clip id `{s}` is not video:end")))?;
        let end = end
            .parse()
            .map_err(|_| Error::invalid(format!("clip id `{s}` has a bad end index")))?;
        Ok(ClipId::new(video, end))
    }
}

/// `T` consecutive frames of one video, labeled by the last frame's phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clip {
    pub id: ClipId,
    /// Index of the video within its dataset.
    pub video: usize,
    pub start: usize,
    pub len: usize,
    pub label: usize,
}

impl Clip {
    pub fn frames<'a>(&self, dataset: &'a Dataset) -> &'a [FrameRecord] {
        &dataset.videos[self.video].frames[self.start..self.start + self.len]
    }

    /// Clip features as a `D×T` matrix (one column per frame).
    pub fn features(&self, dataset: &Dataset) -> Tensor {
        let frames = self.frames(dataset);
        Tensor::from_fn(dataset.feature_dim, self.len, |d, t| frames[t].feature[d])
    }

    pub fn has_outlier(&self, dataset: &Dataset) -> bool {
        self.frames(dataset).iter().any(|f| f.outlier)
    }

    /// Whether the clip's frames span two or more phases.
    pub fn spans_transition(&self, dataset: &Dataset) -> bool {
        let frames = self.frames(dataset);
        frames.iter().any(|f| f.phase != frames[0].phase)
    }
}

/// Stride-1 sliding window over one video. A video shorter than `t` yields
/// no clips.
pub fn make_clips(video: &Video, video_index: usize, t: usize) -> Result<Vec<Clip>> {
    if t == 0 {
        return Err(Error::invalid("clip length must be at least 1"));
    }
    let n = video.len();
    if n < t {
        return Ok(Vec::new());
    }
    Ok((t - 1..n)
        .map(|end| Clip {
            id: ClipId::new(video.id.clone(), end),
            video: video_index,
            start: end + 1 - t,
            len: t,
            label: video.frames[end].phase,
        })
        .collect())
}

/// All clips of a chosen set of videos, indexed by id.
#[derive(Clone, Debug)]
pub struct ClipCatalog {
    clips: Vec<Clip>,
    by_id: BTreeMap<ClipId, usize>,
}

impl ClipCatalog {
    pub fn build(dataset: &Dataset, video_ids: &[String], t: usize) -> Result<Self> {
        let mut clips = Vec::new();
        for id in video_ids {
            let idx = dataset
                .video_index(id)
                .ok_or_else(|| Error::invalid(format!("unknown video id {id}")))?;
            clips.extend(make_clips(&dataset.videos[idx], idx, t)?);
        }
        clips.sort_by(|a, b| a.id.cmp(&b.id));
        let by_id: BTreeMap<ClipId, usize> = clips.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        if by_id.len() != clips.len() {
            return Err(Error::invalid("duplicate video ids in clip catalog"));
        }
        Ok(ClipCatalog { clips, by_id })
    }

    pub fn clips(&self) -> &[Clip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, id: &ClipId) -> Option<&Clip> {
        self.by_id.get(id).map(|&i| &self.clips[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &ClipId> {
        self.clips.iter().map(|c| &c.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(n: usize) -> Video {
        Video {
            id: "v".into(),
            frames: (0..n)
                .map(|i| FrameRecord {
                    frame_index: i,
                    feature: vec![i as f64],
                    phase: i / 5,
                    outlier: false,
                })
                .collect(),
        }
    }

    #[test]
    fn window_counts() {
        let ends: Vec<usize> = make_clips(&video(12), 0, 10)
            .unwrap()
            .iter()
            .map(|c| c.id.end)
            .collect();
        assert_eq!(ends, vec![9, 10, 11]);
        assert_eq!(make_clips(&video(10), 0, 10).unwrap().len(), 1);
        assert!(make_clips(&video(9), 0, 10).unwrap().is_empty());
        assert!(make_clips(&video(3), 0, 0).is_err());
    }

    #[test]
    fn exhaustive_counts_and_overlap() {
        for t in 1..=6 {
            for f in 0..3 * t {
                let clips = make_clips(&video(f), 0, t).unwrap();
                assert_eq!(clips.len(), (f + 1).saturating_sub(t));
                for w in clips.windows(2) {
                    assert_eq!(w[1].start, w[0].start + 1);
                }
            }
        }
    }

    #[test]
    fn label_is_last_frame_phase() {
        let v = video(12);
        let ds = Dataset {
            videos: vec![v],
            feature_dim: 1,
            num_phases: 3,
        };
        for c in make_clips(&ds.videos[0], 0, 4).unwrap() {
            let frames = c.frames(&ds);
            assert_eq!(frames.len(), 4);
            assert_eq!(c.label, frames[3].phase);
            assert_eq!(c.features(&ds).get(0, 3), frames[3].feature[0]);
        }
    }

    #[test]
    fn clip_id_text_round_trip() {
        let id = ClipId::new("video:07", 42);
        assert_eq!(id.to_string().parse::<ClipId>().unwrap(), id);
        assert!("nocolon".parse::<ClipId>().is_err());
    }
}
