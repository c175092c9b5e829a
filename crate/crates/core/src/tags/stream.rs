//! Time-tag records, per-party streams, and the line-oriented dump format:
//! a `#tagstream v1 party=alice duration_ps=...` header followed by one
//! tab-separated `channel time_ps` line per tag.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::TagsError;
use crate::quantum::{DetectorId, Party};

/// One detection: the detector that fired and when, in integer picoseconds
/// since the start of the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeTag {
    pub time: u64,
    pub channel: DetectorId,
}

impl TimeTag {
    pub fn new(channel: DetectorId, time: u64) -> Self {
        Self { time, channel }
    }
}

/// All detections of one party, globally ordered by `(time, channel)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    party: Party,
    tags: Vec<TimeTag>,
    duration_ps: u64,
}

impl TagStream {
    pub fn new(party: Party, tags: Vec<TimeTag>, duration_ps: u64) -> Result<Self, TagsError> {
        if let Some(i) = tags.windows(2).position(|w| w[0] > w[1]) {
            return Err(TagsError::Unsorted { index: i + 1 });
        }
        Ok(Self {
            party,
            tags,
            duration_ps,
        })
    }

    /// Sorts the tags before wrapping them.
    pub fn from_unsorted(party: Party, mut tags: Vec<TimeTag>, duration_ps: u64) -> Self {
        tags.sort_unstable();
        Self {
            party,
            tags,
            duration_ps,
        }
    }

    pub fn party(&self) -> Party {
        self.party
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn times(&self) -> Vec<u64> {
        self.tags.iter().map(|t| t.time).collect()
    }

    /// Every channel must belong to `allowed`.
    pub fn check_channels(&self, allowed: &[DetectorId]) -> Result<(), TagsError> {
        match self.tags.iter().find(|t| !allowed.contains(&t.channel)) {
            Some(t) => Err(TagsError::UnknownChannel {
                party: self.party,
                channel: t.channel,
            }),
            None => Ok(()),
        }
    }

    /// Tags with `start ≤ time < end`.
    pub fn window(&self, start: u64, end: u64) -> &[TimeTag] {
        let lo = self.tags.partition_point(|t| t.time < start);
        let hi = self.tags.partition_point(|t| t.time < end);
        &self.tags[lo..hi]
    }

    /// Count of tags per channel, ascending by channel id.
    pub fn singles(&self) -> Vec<(DetectorId, u64)> {
        let mut counts = std::collections::BTreeMap::new();
        for t in &self.tags {
            *counts.entry(t.channel).or_insert(0u64) += 1;
        }
        counts.into_iter().collect()
    }

    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "#tagstream v1 party={} duration_ps={}",
            self.party, self.duration_ps
        )?;
        for t in &self.tags {
            writeln!(out, "{}\t{}", t.channel.0, t.time)?;
        }
        out.flush()
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<Self, TagsError> {
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(TagsError::Dump { line: 1, reason: "empty input".into() }),
        };
        let (party, duration_ps) = parse_header(&header)?;
        let mut tags = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| TagsError::Dump {
                line: line_no,
                reason: reason.to_string(),
            };
            let (ch, time) = line.split_once('\t').ok_or_else(|| bad("expected channel<TAB>time"))?;
            let channel = ch.trim().parse::<u16>().map_err(|_| bad("bad channel id"))?;
            let time = time.trim().parse::<u64>().map_err(|_| bad("bad time"))?;
            tags.push(TimeTag::new(DetectorId(channel), time));
        }
        Self::new(party, tags, duration_ps)
    }
}

fn parse_header(line: &str) -> Result<(Party, u64), TagsError> {
    let bad = |reason: &str| TagsError::Dump {
        line: 1,
        reason: reason.to_string(),
    };
    let mut fields = line.split_whitespace();
    if fields.next() != Some("#tagstream") || fields.next() != Some("v1") {
        return Err(bad("missing `#tagstream v1` header"));
    }
    let mut party = None;
    let mut duration = None;
    for field in fields {
        match field.split_once('=') {
            Some(("party", "alice")) => party = Some(Party::Alice),
            Some(("party", "bob")) => party = Some(Party::Bob),
            Some(("duration_ps", v)) => {
                duration = Some(v.parse::<u64>().map_err(|_| bad("bad duration_ps"))?)
            }
            _ => return Err(bad("unrecognized header field")),
        }
    }
    Ok((
        party.ok_or_else(|| bad("header lacks party"))?,
        duration.ok_or_else(|| bad("header lacks duration_ps"))?,
    ))
}
