use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::Args;
use gridtalk_client::Client;
use gridtalk_core::dialogue::{AgentUtterance, Conversation, SimulatedUser};
use gridtalk_core::grid::{EpisodeConfig, DEFAULT_TURN_LIMIT};
use gridtalk_core::scenegen::{parse_record, SceneRecord, Strictness};
use gridtalk_core::trainer::{step_reward, Distances, RewardConfig};
use gridtalk_protocol::{ActResponse, CreateSessionRequest, SessionStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{load_scenes, usage, CmdResult, SplitArg};

#[derive(Args)]
#[command(group = clap::ArgGroup::new("pick").required(true).args(["scene_id", "random"]))]
pub struct PlayArgs {
    /// Scene file; not needed with --server.
    #[arg(long, required_unless_present = "server")]
    data: Option<PathBuf>,
    #[arg(long)]
    scene_id: Option<String>,
    /// Draw a scene from --split.
    #[arg(long)]
    random: bool,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, env = "GRIDTALK_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_TURN_LIMIT)]
    turn_limit: usize,
    /// Probability that the user flips a relational answer.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Play against a running service instead of locally.
    #[arg(long, conflicts_with_all = ["data", "turn_limit", "noise"])]
    server: Option<String>,
}

/// What gets shown once the episode is over.
pub struct Reveal {
    pub record: SceneRecord,
}

/// One blind episode, local or remote.
pub trait Game {
    fn turn_limit(&self) -> usize;
    fn act(&mut self, index: usize) -> anyhow::Result<ActResponse>;
    /// Only valid after the episode has ended.
    fn reveal(&mut self) -> anyhow::Result<Reveal>;
}

pub struct LocalGame {
    record: SceneRecord,
    conv: Conversation,
    rng: ChaCha8Rng,
    reward: f64,
}

impl LocalGame {
    pub fn new(record: SceneRecord, config: EpisodeConfig, noise: f64, rng: ChaCha8Rng) -> Self {
        let conv = Conversation::new(
            Arc::new(record.scene.clone()),
            config,
            SimulatedUser::with_noise(noise),
        );
        Self {
            record,
            conv,
            rng,
            reward: 0.0,
        }
    }
}

fn session_status(s: gridtalk_core::grid::EpisodeStatus) -> SessionStatus {
    match s {
        gridtalk_core::grid::EpisodeStatus::Ongoing => SessionStatus::Ongoing,
        gridtalk_core::grid::EpisodeStatus::Success => SessionStatus::Success,
        gridtalk_core::grid::EpisodeStatus::Failure => SessionStatus::Failure,
    }
}

impl Game for LocalGame {
    fn turn_limit(&self) -> usize {
        self.conv.state().config().turn_limit
    }

    fn act(&mut self, index: usize) -> anyhow::Result<ActResponse> {
        let ex = self
            .conv
            .step(AgentUtterance::from_index(index)?, &mut self.rng)?;
        let delta = step_reward(&ex, &RewardConfig::base(), Distances::None);
        self.reward += delta;
        Ok(ActResponse {
            response_text: ex.turn.user.render(),
            turn: self.conv.turns().len(),
            reward_delta: delta,
            cumulative_reward: self.reward,
            status: session_status(ex.status),
        })
    }

    fn reveal(&mut self) -> anyhow::Result<Reveal> {
        if !self.conv.status().is_terminal() {
            bail!("the scene stays hidden until the episode ends");
        }
        Ok(Reveal {
            record: self.record.clone(),
        })
    }
}

pub struct RemoteGame {
    client: Client,
    runtime: tokio::runtime::Runtime,
    session: String,
    turn_limit: usize,
}

impl RemoteGame {
    pub fn start(url: &str, req: CreateSessionRequest) -> anyhow::Result<RemoteGame> {
        let client = Client::new(url)?;
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()?;
        let created = runtime.block_on(client.create_session(&req))?;
        let view = runtime.block_on(client.session(&created.session_id))?;
        Ok(RemoteGame {
            client,
            runtime,
            session: created.session_id,
            turn_limit: view.turn_limit,
        })
    }
}

impl Game for RemoteGame {
    fn turn_limit(&self) -> usize {
        self.turn_limit
    }

    fn act(&mut self, index: usize) -> anyhow::Result<ActResponse> {
        Ok(self
            .runtime
            .block_on(self.client.act(&self.session, index))?)
    }

    fn reveal(&mut self) -> anyhow::Result<Reveal> {
        let r = self.runtime.block_on(self.client.reveal(&self.session))?;
        let record = parse_record(
            r.record.get(),
            Path::new(self.client.base_url()),
            1,
            Strictness::Lenient,
        )
        .context("server sent an unreadable scene")?;
        Ok(Reveal { record })
    }
}

fn print_choices(out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "You are the agent. The grid is hidden; ask and instruct by number:"
    )?;
    for u in AgentUtterance::ALL {
        writeln!(out, "  {}  {}", u.index(), u.render())?;
    }
    Ok(())
}

/// Line-mode loop: shows the choices, reads one index per line, and
/// prints the scene only after the episode has ended.
pub fn run_game(
    game: &mut dyn Game,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> anyhow::Result<ActResponse> {
    print_choices(out)?;
    let limit = game.turn_limit();
    let mut turn = 0;
    let last = loop {
        write!(out, "turn {}/{limit}> ", turn + 1)?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            bail!("input ended before the episode did");
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "?" || text == "help" {
            print_choices(out)?;
            continue;
        }
        if text == "q" || text == "quit" {
            bail!("episode abandoned");
        }
        let index = match text.parse::<usize>() {
            Ok(i) if i < AgentUtterance::COUNT => i,
            _ => {
                writeln!(
                    out,
                    "enter a number from 0 to {} (? lists the choices)",
                    AgentUtterance::COUNT - 1
                )?;
                continue;
            }
        };
        let r = game.act(index)?;
        turn = r.turn;
        writeln!(
            out,
            "  you: {}\n  user: {}   (reward {:+}, total {})",
            AgentUtterance::ALL[index].render(),
            r.response_text,
            r.reward_delta,
            r.cumulative_reward
        )?;
        if r.status.is_terminal() {
            break r;
        }
    };
    let outcome = match last.status {
        SessionStatus::Success => "success",
        _ => "failure",
    };
    writeln!(
        out,
        "result: {outcome} after {} turns, total reward {}",
        last.turn, last.cumulative_reward
    )?;
    let reveal = game.reveal()?;
    let rec = &reveal.record;
    writeln!(
        out,
        "scene {} ({}), optimal solve length {}",
        rec.id, rec.difficulty, rec.solve_length
    )?;
    write!(out, "{}", rec.scene.to_ascii())?;
    writeln!(out, "S square, C circle, # obstacle, T trap")?;
    Ok(last)
}

pub fn play_local(a: PlayArgs) -> CmdResult {
    let seed = a.seed.unwrap_or_else(rand::random);
    let mut game: Box<dyn Game> = match &a.server {
        Some(url) => {
            let req = CreateSessionRequest {
                split: a
                    .split
                    .split()
                    .filter(|_| a.scene_id.is_none())
                    .map(|s| s.as_str().to_string()),
                scene_id: a.scene_id.clone(),
                seed: Some(seed),
            };
            Box::new(RemoteGame::start(url, req)?)
        }
        None => {
            if !(0.0..=1.0).contains(&a.noise) {
                return Err(usage(format!(
                    "--noise must lie in [0, 1], got {}",
                    a.noise
                )));
            }
            if a.turn_limit == 0 {
                return Err(usage("--turn-limit must be positive"));
            }
            let data = a
                .data
                .as_ref()
                .expect("clap requires --data without --server");
            let split = if a.scene_id.is_some() {
                SplitArg::All
            } else {
                a.split
            };
            let scenes = load_scenes(data, split)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let record = match &a.scene_id {
                Some(id) => scenes
                    .iter()
                    .find(|r| &r.id == id)
                    .cloned()
                    .ok_or_else(|| anyhow!("no scene {id:?} in {}", data.display()))?,
                None => scenes[rng.gen_range(0..scenes.len())].clone(),
            };
            let cfg = EpisodeConfig {
                turn_limit: a.turn_limit,
                ..EpisodeConfig::default()
            };
            Box::new(LocalGame::new(record, cfg, a.noise, rng))
        }
    };
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    run_game(game.as_mut(), &mut input, &mut out)?;
    Ok(())
}
