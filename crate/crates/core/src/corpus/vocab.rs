use super::Trajectory;
use crate::error::{Error, Result};

/// Which boundary tokens delimit trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// `[links.., EOT]`
    EotOnly,
    /// `[BOT, links.., EOT]`
    BotAndEot,
}

/// Token ids: `0..L` are links, `L` is <EOT>, `L+1` is <BOT> when enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vocab {
    num_links: usize,
    mode: BoundaryMode,
}

impl Vocab {
    pub fn new(num_links: usize, mode: BoundaryMode) -> Self {
        Vocab { num_links, mode }
    }

    pub fn num_links(&self) -> usize {
        self.num_links
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    pub fn size(&self) -> usize {
        match self.mode {
            BoundaryMode::EotOnly => self.num_links + 1,
            BoundaryMode::BotAndEot => self.num_links + 2,
        }
    }

    pub fn eot(&self) -> usize {
        self.num_links
    }

    pub fn bot(&self) -> Option<usize> {
        match self.mode {
            BoundaryMode::EotOnly => None,
            BoundaryMode::BotAndEot => Some(self.num_links + 1),
        }
    }

    pub fn is_boundary(&self, token: usize) -> bool {
        token >= self.num_links
    }

    pub fn boundary_tokens(&self) -> impl Iterator<Item = usize> {
        self.num_links..self.size()
    }

    /// Context that precedes the first link of a trajectory during training
    /// and generation.
    pub fn start_token(&self) -> usize {
        self.bot().unwrap_or(self.eot())
    }
}

pub fn encode(traj: &Trajectory, vocab: &Vocab) -> Result<Vec<usize>> {
    if let Some((i, &l)) = traj.iter().enumerate().find(|(_, &l)| l >= vocab.num_links()) {
        return Err(Error::invalid(format!("unknown link id {l} at index {i}")));
    }
    let mut out = Vec::with_capacity(traj.len() + 2);
    if let Some(bot) = vocab.bot() {
        out.push(bot);
    }
    out.extend_from_slice(traj.links());
    out.push(vocab.eot());
    Ok(out)
}

/// Strips boundary tokens and truncates at the first <EOT>.
pub fn decode(tokens: &[usize], vocab: &Vocab) -> Trajectory {
    let links = tokens
        .iter()
        .copied()
        .take_while(|&t| t != vocab.eot())
        .filter(|&t| !vocab.is_boundary(t))
        .collect();
    Trajectory::new(links)
}
