//! Time-tag files.
//!
//! The binary form is a flat sequence of 9-byte records: a channel id byte
//! followed by the timestamp as a little-endian `u64` in picoseconds,
//! ordered by time. Metadata lives in a TOML sidecar next to it. The text
//! form has one `channel,t` line per tag, with the channel name.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Channel, ExperimentConfig, TagStreams, TimeTag};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const RECORD_BYTES: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagFileHeader {
    pub version: u32,
    /// Channel names indexed by id.
    pub channels: Vec<String>,
    pub duration_ps: u64,
    pub seed: u64,
    /// Analyzer setting label such as `HV`, when the run has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
}

impl TagFileHeader {
    pub fn new(duration_ps: u64, seed: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            channels: Channel::ALL.iter().map(|c| c.name().to_string()).collect(),
            duration_ps,
            seed,
            setting: None,
            config: None,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let h: Self = toml::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        if h.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported tag file version {}", h.version)));
        }
        Ok(h)
    }
}

fn check_order(prev: &mut Option<TimeTag>, tag: TimeTag) -> Result<()> {
    if let Some(p) = *prev {
        if tag.t < p.t {
            return Err(Error::Unsorted(format!("tag at {} ps after {} ps", tag.t, p.t)));
        }
    }
    *prev = Some(tag);
    Ok(())
}

pub fn write_binary<W: Write>(mut w: W, streams: &TagStreams) -> Result<()> {
    let mut buf = [0u8; RECORD_BYTES];
    for tag in streams.merged() {
        buf[0] = tag.channel as u8;
        buf[1..].copy_from_slice(&tag.t.to_le_bytes());
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R, duration_ps: u64) -> Result<TagStreams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let mut tags = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    let mut prev = None;
    for rec in bytes.chunks_exact(RECORD_BYTES) {
        let channel = Channel::from_index(rec[0])?;
        let t = u64::from_le_bytes(rec[1..].try_into().expect("record is 9 bytes"));
        let tag = TimeTag { t, channel };
        check_order(&mut prev, tag)?;
        tags.push(tag);
    }
    Ok(TagStreams::from_tags(&tags, duration_ps))
}

pub fn write_text<W: Write>(mut w: W, streams: &TagStreams) -> Result<()> {
    for tag in streams.merged() {
        writeln!(w, "{},{}", tag.channel, tag.t)?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines and lines starting with `#` are skipped.
pub fn read_text<R: Read>(r: R, duration_ps: u64) -> Result<TagStreams> {
    let mut tags = Vec::new();
    let mut prev = None;
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (ch, t) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::Format(format!("line {}: expected `channel,t`", i + 1)))?;
        let channel: Channel = ch.parse()?;
        let t: u64 = t
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        let tag = TimeTag { t, channel };
        check_order(&mut prev, tag)?;
        tags.push(tag);
    }
    Ok(TagStreams::from_tags(&tags, duration_ps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagFormat {
    Binary,
    Text,
}

impl TagFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TagFormat::Binary => "ttag",
            TagFormat::Text => "csv",
        }
    }
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("toml")
}

/// Writes `<stem>.<ext>` and its sidecar. `preamble` holds `#` comment
/// lines (may be empty) placed at the top of the sidecar and, for the text
/// form, of the data file. Returns the data path.
pub fn save(
    dir: &Path,
    stem: &str,
    streams: &TagStreams,
    header: &TagFileHeader,
    format: TagFormat,
    preamble: &str,
) -> Result<PathBuf> {
    if preamble.lines().any(|l| !l.trim_start().starts_with('#')) {
        return Err(Error::InvalidParameter("sidecar preamble must be comment lines".into()));
    }
    let data = dir.join(format!("{stem}.{}", format.extension()));
    let mut file = BufWriter::new(fs::File::create(&data)?);
    match format {
        TagFormat::Binary => write_binary(file, streams)?,
        TagFormat::Text => {
            for line in preamble.lines() {
                writeln!(file, "{line}")?;
            }
            write_text(file, streams)?
        }
    }
    let mut sidecar = String::from(preamble);
    if !sidecar.is_empty() && !sidecar.ends_with('\n') {
        sidecar.push('\n');
    }
    sidecar.push_str(&header.to_toml()?);
    fs::write(sidecar_path(&data), sidecar)?;
    Ok(data)
}

/// Reads a data file and its sidecar; the format follows the extension.
pub fn load(data: &Path) -> Result<(TagFileHeader, TagStreams)> {
    let header = TagFileHeader::from_toml(&fs::read_to_string(sidecar_path(data))?)?;
    let file = BufReader::new(fs::File::open(data)?);
    let streams = match data.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_text(file, header.duration_ps)?,
        _ => read_binary(file, header.duration_ps)?,
    };
    Ok((header, streams))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TagStreams {
        TagStreams::from_unsorted(
            [vec![0, 1_250_000], vec![3_000, u64::MAX], vec![4_500], vec![3_000, 5_500]],
            2_500_000,
        )
    }

    #[test]
    fn binary_round_trip() {
        let s = sample();
        let mut buf = Vec::new();
        write_binary(&mut buf, &s).unwrap();
        assert_eq!(buf.len(), 9 * s.len());
        assert_eq!(read_binary(&buf[..], s.duration_ps).unwrap(), s);
    }

    #[test]
    fn text_round_trip() {
        let s = sample();
        let mut buf = Vec::new();
        write_text(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("CLOCK,0\n"));
        assert_eq!(read_text(&buf[..], s.duration_ps).unwrap(), s);
    }

    #[test]
    fn truncated_record_is_rejected() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &sample()).unwrap();
        buf.pop();
        assert!(matches!(read_binary(&buf[..], 0), Err(Error::Format(_))));
    }

    #[test]
    fn out_of_order_text_is_rejected() {
        let text = "D_A',10\nD_B',5\n";
        assert!(matches!(read_text(text.as_bytes(), 0), Err(Error::Unsorted(_))));
    }

    #[test]
    fn header_with_config_round_trips() {
        let mut h = TagFileHeader::new(10, 7);
        h.setting = Some("HV".into());
        h.config = Some(ExperimentConfig::default());
        let back = TagFileHeader::from_toml(&h.to_toml().unwrap()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        let h = TagFileHeader::new(s.duration_ps, 1);
        for fmt in [TagFormat::Binary, TagFormat::Text] {
            let p = save(dir.path(), "run", &s, &h, fmt, "# test").unwrap();
            let (h2, s2) = load(&p).unwrap();
            assert_eq!(h2, h);
            assert_eq!(s2, s);
        }
    }
}
