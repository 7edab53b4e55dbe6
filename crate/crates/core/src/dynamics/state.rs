use serde::{Deserialize, Serialize};

use crate::num::Real;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Alive,
    LostMajorana,
    LostLeak,
    LostBackground,
    LostBarrier,
    /// Left through the open exit aperture into the detection guide.
    Detected,
}

impl Status {
    pub const ALL: [Status; 6] = [
        Status::Alive,
        Status::LostMajorana,
        Status::LostLeak,
        Status::LostBackground,
        Status::LostBarrier,
        Status::Detected,
    ];

    pub fn is_alive(self) -> bool {
        self == Status::Alive
    }

    pub fn is_loss(self) -> bool {
        !matches!(self, Status::Alive | Status::Detected)
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Alive => "alive",
            Status::LostMajorana => "lost_majorana",
            Status::LostLeak => "lost_leak",
            Status::LostBackground => "lost_background",
            Status::LostBarrier => "lost_barrier",
            Status::Detected => "detected",
        }
    }
}

/// One Monte Carlo molecule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeState<T> {
    /// Stable index; selects the molecule's random streams.
    pub id: u64,
    pub pos: Vec3<T>,
    pub vel: Vec3<T>,
    pub mu_eff: T,
    pub status: Status,
    /// Time of the terminal event (exit time for `Detected`).
    pub t_loss: Option<T>,
    /// Draws consumed from the dynamics stream so far.
    pub draws: u64,
}

impl<T: Real> MoleculeState<T> {
    pub fn new(id: u64, pos: Vec3<T>, vel: Vec3<T>, mu_eff: T) -> Self {
        Self { id, pos, vel, mu_eff, status: Status::Alive, t_loss: None, draws: 0 }
    }

    pub fn is_alive(&self) -> bool {
        self.status.is_alive()
    }

    /// Moves an alive molecule to a terminal status. Terminal states never change.
    pub fn terminate(&mut self, status: Status, t: T) {
        debug_assert!(status != Status::Alive);
        if self.is_alive() {
            self.status = status;
            self.t_loss = Some(t);
        }
    }

    pub fn kinetic_energy(&self, mass: T) -> T {
        T::half() * mass * self.vel.norm_sq()
    }
}

/// Counts per status for a finished ensemble.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub alive: usize,
    pub lost_majorana: usize,
    pub lost_leak: usize,
    pub lost_background: usize,
    pub lost_barrier: usize,
    pub detected: usize,
}

impl StatusCounts {
    pub fn tally<'a, T: Real>(states: impl IntoIterator<Item = &'a MoleculeState<T>>) -> Self {
        let mut c = Self::default();
        for s in states {
            *c.slot(s.status) += 1;
        }
        c
    }

    fn slot(&mut self, s: Status) -> &mut usize {
        match s {
            Status::Alive => &mut self.alive,
            Status::LostMajorana => &mut self.lost_majorana,
            Status::LostLeak => &mut self.lost_leak,
            Status::LostBackground => &mut self.lost_background,
            Status::LostBarrier => &mut self.lost_barrier,
            Status::Detected => &mut self.detected,
        }
    }

    pub fn get(&self, s: Status) -> usize {
        match s {
            Status::Alive => self.alive,
            Status::LostMajorana => self.lost_majorana,
            Status::LostLeak => self.lost_leak,
            Status::LostBackground => self.lost_background,
            Status::LostBarrier => self.lost_barrier,
            Status::Detected => self.detected,
        }
    }

    pub fn lost(&self) -> usize {
        self.lost_majorana + self.lost_leak + self.lost_background + self.lost_barrier
    }

    pub fn total(&self) -> usize {
        self.alive + self.lost() + self.detected
    }
}
