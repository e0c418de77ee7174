use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use gridtalk_core::dialogue::TranscriptRecord;
use gridtalk_protocol::StatsResponse;
use serde::{Deserialize, Serialize};

pub const STORE_FILE: &str = "sessions.jsonl";

/// One finished session, one line of the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEpisode {
    pub session_id: String,
    #[serde(flatten)]
    pub transcript: TranscriptRecord,
    /// Closed by the idle timeout rather than by play.
    pub expired: bool,
    /// Unix seconds.
    pub finished_at: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Tally {
    pub episodes: usize,
    pub successes: usize,
    pub reward_sum: f64,
}

impl Tally {
    pub fn add(&mut self, ep: &StoredEpisode) {
        self.episodes += 1;
        if ep.transcript.outcome == "success" {
            self.successes += 1;
        }
        self.reward_sum += ep.transcript.reward;
    }

    pub fn stats(&self) -> StatsResponse {
        let n = self.episodes;
        StatsResponse {
            episodes: n,
            success_rate: (n > 0).then(|| self.successes as f64 / n as f64),
            avg_reward: (n > 0).then(|| self.reward_sum / n as f64),
        }
    }
}

/// Append-only JSONL log of finished sessions plus the running tally.
#[derive(Debug)]
pub struct Store {
    path: PathBuf,
    file: File,
    tally: Tally,
    skipped: usize,
}

impl Store {
    /// Opens (or creates) the log in `dir` and tallies what is already there.
    /// Lines that do not parse are skipped with a warning; a torn final
    /// line is terminated so later appends start cleanly.
    pub fn open(dir: &Path) -> io::Result<Store> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(STORE_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut tally = Tally::default();
        let mut skipped = 0;
        for (i, line) in BufReader::new(&file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<StoredEpisode>(&line) {
                Ok(ep) => tally.add(&ep),
                Err(e) => {
                    skipped += 1;
                    tracing::warn!(
                        "{}:{}: skipping unreadable session record: {e}",
                        path.display(),
                        i + 1
                    );
                }
            }
        }
        let len = file.metadata()?.len();
        if len > 0 {
            file.seek(SeekFrom::Start(len - 1))?;
            let mut last = [0u8; 1];
            file.read_exact(&mut last)?;
            if last[0] != b'\n' {
                file.write_all(b"\n")?;
            }
        }
        Ok(Store {
            path,
            file,
            tally,
            skipped,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn append(&mut self, ep: &StoredEpisode) -> io::Result<()> {
        let mut line = serde_json::to_vec(ep).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.tally.add(ep);
        Ok(())
    }

    pub fn stats(&self) -> StatsResponse {
        self.tally.stats()
    }
}
