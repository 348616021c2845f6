//! Recordings, mono clips and WAV input/output.
//!
//! Multichannel files map positionally onto the four abdominal quadrants
//! (RUQ, LUQ, RLQ, LLQ). Every channel is treated as an independent mono
//! pipeline downstream.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest sample rate that still gives two samples per 1 ms frame.
pub const MIN_SAMPLE_RATE: u32 = 2000;

/// Times that sit on the sample grid may land a hair below the exact
/// product after `t * fs`; this keeps `floor` from dropping a sample.
const GRID_EPS: f64 = 1e-9;

/// Convert a time in seconds to a sample index (floor on the sample grid).
pub fn time_to_index(t_s: f64, sample_rate: u32) -> usize {
    (t_s * f64::from(sample_rate) + GRID_EPS).floor().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Arc<[f32]>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::InvalidAudio(format!(
                "sample rate {sample_rate} Hz below minimum {MIN_SAMPLE_RATE} Hz"
            )));
        }
        if let Some((i, x)) = samples
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || x.abs() > 1.0)
        {
            return Err(Error::InvalidAudio(format!(
                "sample {i} = {x} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples: samples.into(),
            sample_rate,
        })
    }

    /// Build a clip from `f64` samples, rejecting anything out of range.
    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&x| x as f32).collect(), sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Samples in `[floor(start_s·fs), floor(end_s·fs))`.
    pub fn slice(&self, start_s: f64, end_s: f64) -> Result<AudioClip> {
        let duration_s = self.duration_s();
        let bad = !(start_s.is_finite() && end_s.is_finite())
            || start_s < 0.0
            || start_s >= end_s
            || end_s > duration_s + GRID_EPS;
        if bad {
            return Err(Error::SliceOutOfRange {
                start_s,
                end_s,
                duration_s,
            });
        }
        let a = time_to_index(start_s, self.sample_rate).min(self.len());
        let b = time_to_index(end_s, self.sample_rate).min(self.len());
        Ok(AudioClip {
            samples: self.samples[a..b].into(),
            sample_rate: self.sample_rate,
        })
    }

    /// Clip restricted to the sample range `[start, end)`, clamped to bounds.
    pub fn slice_samples(&self, start: usize, end: usize) -> AudioClip {
        let end = end.min(self.len());
        let start = start.min(end);
        AudioClip {
            samples: self.samples[start..end].into(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Channel identifier: one of the four abdominal quadrants, or a plain index
/// for recordings with more channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelId {
    Ruq,
    Luq,
    Rlq,
    Llq,
    Index(usize),
}

impl ChannelId {
    pub const QUADRANTS: [ChannelId; 4] =
        [ChannelId::Ruq, ChannelId::Luq, ChannelId::Rlq, ChannelId::Llq];

    /// Positional mapping used for multichannel files.
    pub fn from_position(k: usize) -> Self {
        Self::QUADRANTS.get(k).copied().unwrap_or(ChannelId::Index(k))
    }

    pub fn position(&self) -> usize {
        match self {
            ChannelId::Ruq => 0,
            ChannelId::Luq => 1,
            ChannelId::Rlq => 2,
            ChannelId::Llq => 3,
            ChannelId::Index(k) => *k,
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelId::Ruq => f.write_str("RUQ"),
            ChannelId::Luq => f.write_str("LUQ"),
            ChannelId::Rlq => f.write_str("RLQ"),
            ChannelId::Llq => f.write_str("LLQ"),
            ChannelId::Index(k) => write!(f, "ch{k}"),
        }
    }
}

impl FromStr for ChannelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "RUQ" => Ok(ChannelId::Ruq),
            "LUQ" => Ok(ChannelId::Luq),
            "RLQ" => Ok(ChannelId::Rlq),
            "LLQ" => Ok(ChannelId::Llq),
            _ => s
                .strip_prefix("ch")
                .and_then(|n| n.parse().ok())
                .map(ChannelId::Index)
                .ok_or_else(|| Error::Config(format!("unknown channel id {s:?}"))),
        }
    }
}

impl Serialize for ChannelId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChannelId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Healthy,
    Patient,
    #[default]
    Unknown,
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cohort::Healthy => "healthy",
            Cohort::Patient => "patient",
            Cohort::Unknown => "unknown",
        })
    }
}

impl FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(Cohort::Healthy),
            "patient" => Ok(Cohort::Patient),
            "unknown" => Ok(Cohort::Unknown),
            _ => Err(Error::Config(format!("unknown cohort {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub cohort: Cohort,
    pub subject_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    channels: BTreeMap<ChannelId, AudioClip>,
    pub subject_meta: Option<SubjectMeta>,
}

impl Recording {
    pub fn new(channels: BTreeMap<ChannelId, AudioClip>) -> Result<Self> {
        let mut rates = channels.values().map(AudioClip::sample_rate);
        let Some(fs) = rates.next() else {
            return Err(Error::InvalidAudio("recording has no channels".into()));
        };
        if rates.any(|r| r != fs) {
            return Err(Error::InvalidAudio(
                "channels do not share a sample rate".into(),
            ));
        }
        Ok(Self {
            channels,
            subject_meta: None,
        })
    }

    /// Recording whose clips are assigned to quadrants in order.
    pub fn from_clips(clips: Vec<AudioClip>) -> Result<Self> {
        Self::new(
            clips
                .into_iter()
                .enumerate()
                .map(|(k, c)| (ChannelId::from_position(k), c))
                .collect(),
        )
    }

    pub fn mono(clip: AudioClip) -> Self {
        Self::from_clips(vec![clip]).expect("single channel is always valid")
    }

    pub fn with_meta(mut self, meta: SubjectMeta) -> Self {
        self.subject_meta = Some(meta);
        self
    }

    pub fn channels(&self) -> &BTreeMap<ChannelId, AudioClip> {
        &self.channels
    }

    pub fn channel(&self, id: ChannelId) -> Option<&AudioClip> {
        self.channels.get(&id)
    }

    pub fn sample_rate(&self) -> u32 {
        self.channels
            .values()
            .next()
            .map(AudioClip::sample_rate)
            .expect("recording has at least one channel")
    }

    pub fn duration_s(&self) -> f64 {
        self.channels
            .values()
            .map(AudioClip::duration_s)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcmFormat {
    #[default]
    Int16,
    Float32,
}

impl PcmFormat {
    /// Magnitude of one quantisation step, in normalised units.
    pub fn lsb(&self) -> f64 {
        match self {
            PcmFormat::Int16 => 1.0 / 32768.0,
            PcmFormat::Float32 => f64::from(f32::EPSILON),
        }
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_wav(std::io::BufReader::new(file), path)
}

/// Decode WAV data from any reader; `origin` only labels error messages.
pub fn read_wav<R: Read>(reader: R, origin: &Path) -> Result<Recording> {
    let reader = hound::WavReader::new(reader).map_err(|e| header_error(e, origin))?;
    let spec = reader.spec();
    let n_ch = usize::from(spec.channels);
    if !(1..=4).contains(&n_ch) {
        return Err(Error::UnsupportedEncoding {
            path: origin.into(),
            detail: format!("{n_ch} channels (1-4 supported)"),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| data_error(e, origin))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| data_error(e, origin))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: origin.into(),
                detail: format!("{bits}-bit {fmt:?} (need 16-bit int or 32-bit float)"),
            })
        }
    };
    if interleaved.len() < n_ch {
        return Err(Error::ZeroLength {
            path: origin.into(),
        });
    }
    let frames = interleaved.len() / n_ch;
    let clips = (0..n_ch)
        .map(|c| {
            let ch: Vec<f32> = (0..frames).map(|i| interleaved[i * n_ch + c]).collect();
            AudioClip::new(ch, spec.sample_rate)
        })
        .collect::<Result<Vec<_>>>()?;
    Recording::from_clips(clips)
}

fn header_error(e: hound::Error, path: &Path) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            path: path.into(),
            detail: "format not supported by the WAV decoder".into(),
        },
        hound::Error::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => {
            Error::Io(io)
        }
        other => Error::CorruptHeader {
            path: path.into(),
            detail: other.to_string(),
        },
    }
}

fn data_error(e: hound::Error, path: &Path) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => {
            Error::Io(io)
        }
        other => Error::CorruptHeader {
            path: path.into(),
            detail: format!("sample data: {other}"),
        },
    }
}

pub fn write_wav(path: impl AsRef<Path>, recording: &Recording, format: PcmFormat) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    encode_wav(std::io::BufWriter::new(file), recording, format)
}

/// Encode a single clip as an in-memory WAV file.
pub fn wav_bytes(clip: &AudioClip, format: PcmFormat) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    encode_wav(&mut cursor, &Recording::mono(clip.clone()), format)?;
    Ok(cursor.into_inner())
}

fn encode_wav<W: Write + Seek>(writer: W, recording: &Recording, format: PcmFormat) -> Result<()> {
    let clips: Vec<&AudioClip> = recording.channels().values().collect();
    let spec = hound::WavSpec {
        channels: clips.len() as u16,
        sample_rate: recording.sample_rate(),
        bits_per_sample: match format {
            PcmFormat::Int16 => 16,
            PcmFormat::Float32 => 32,
        },
        sample_format: match format {
            PcmFormat::Int16 => hound::SampleFormat::Int,
            PcmFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let frames = clips.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut w = hound::WavWriter::new(writer, spec).map_err(wav_write_error)?;
    for i in 0..frames {
        for clip in &clips {
            let x = clip.samples().get(i).copied().unwrap_or(0.0);
            match format {
                PcmFormat::Int16 => {
                    let v = (f64::from(x) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_sample(v)
                }
                PcmFormat::Float32 => w.write_sample(x),
            }
            .map_err(wav_write_error)?;
        }
    }
    w.finalize().map_err(wav_write_error)?;
    Ok(())
}

fn wav_write_error(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::InvalidAudio(other.to_string()),
    }
}
