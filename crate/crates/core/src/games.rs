//! The four social dilemmas: actions, payoff functions, cooperation
//! classification, and reference equilibrium profiles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four action labels shared by every game. Each game only
/// admits a subset (PD/PG/TG: A0/A1, TD: all four).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    A0,
    A1,
    A2,
    A3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::A0, Action::A1, Action::A2, Action::A3];

    pub fn label(&self) -> &'static str {
        match self {
            Action::A0 => "A0",
            Action::A1 => "A1",
            Action::A2 => "A2",
            Action::A3 => "A3",
        }
    }

    pub fn from_label(s: &str) -> Option<Action> {
        match s.to_ascii_uppercase().as_str() {
            "A0" => Some(Action::A0),
            "A1" => Some(Action::A1),
            "A2" => Some(Action::A2),
            "A3" => Some(Action::A3),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Payoff points at a fixed one-decimal resolution, stored as tenths.
/// All four games resolve exactly at this resolution, so game logic
/// never touches floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Points(i64);

impl Points {
    pub const ZERO: Points = Points(0);

    pub fn from_tenths(tenths: i64) -> Points {
        Points(tenths)
    }

    pub fn from_int(whole: i64) -> Points {
        Points(whole * 10)
    }

    pub fn tenths(&self) -> i64 {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl std::ops::Add for Points {
    type Output = Points;
    fn add(self, rhs: Points) -> Points {
        Points(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Points {
    type Output = Points;
    fn sub(self, rhs: Points) -> Points {
        Points(self.0 - rhs.0)
    }
}

impl std::iter::Sum for Points {
    fn sum<I: Iterator<Item = Points>>(iter: I) -> Points {
        iter.fold(Points::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Points {
    /// One decimal place, uniformly: "200.0", "-100.0", "0.5" -> "0.5"? No:
    /// tenths render as "{whole}.{tenth}", e.g. 5 tenths -> "0.5".
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.abs();
        write!(f, "{}{}.{}", sign, abs / 10, abs % 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GameKind {
    /// Prisoner's Dilemma.
    PD,
    /// Traveler's Dilemma.
    TD,
    /// Public Goods Game.
    PG,
    /// Trust Game.
    TG,
}

impl GameKind {
    pub const ALL: [GameKind; 4] = [GameKind::PD, GameKind::TD, GameKind::PG, GameKind::TG];

    pub fn name(&self) -> &'static str {
        match self {
            GameKind::PD => "PD",
            GameKind::TD => "TD",
            GameKind::PG => "PG",
            GameKind::TG => "TG",
        }
    }

    pub fn from_name(s: &str) -> Option<GameKind> {
        match s.to_ascii_uppercase().as_str() {
            "PD" => Some(GameKind::PD),
            "TD" => Some(GameKind::TD),
            "PG" => Some(GameKind::PG),
            "TG" => Some(GameKind::TG),
            _ => None,
        }
    }
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A complete game definition. Constructed via [`GameSpec::new`]; the
/// payoff constants are fixed per game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameSpec {
    pub kind: GameKind,
    pub n_players: usize,
}

/// Nash and socially optimal joint-action profiles for one game.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceProfiles {
    pub nash: Vec<Action>,
    pub social_optimum: Vec<Action>,
}

impl GameSpec {
    pub fn new(kind: GameKind) -> GameSpec {
        let n_players = match kind {
            GameKind::PG => 3,
            _ => 2,
        };
        GameSpec { kind, n_players }
    }

    pub fn valid_actions(&self) -> &'static [Action] {
        match self.kind {
            GameKind::TD => &Action::ALL,
            _ => &Action::ALL[..2],
        }
    }

    pub fn cooperative_action(&self) -> Action {
        match self.kind {
            GameKind::TD => Action::A3,
            _ => Action::A0,
        }
    }

    /// The defect action used by scripted strategies and the
    /// defect-default fallback (lowest claim in TD).
    pub fn defect_action(&self) -> Action {
        match self.kind {
            GameKind::TD => Action::A0,
            _ => Action::A1,
        }
    }

    fn check_joint(&self, joint: &[Action]) -> Result<()> {
        if joint.len() != self.n_players {
            return Err(Error::ArityError {
                expected: self.n_players,
                got: joint.len(),
            });
        }
        for a in joint {
            if !self.valid_actions().contains(a) {
                return Err(Error::InvalidAction {
                    game: self.kind.name().to_string(),
                    action: a.label().to_string(),
                });
            }
        }
        Ok(())
    }

    /// TD claim value for an action, in whole points.
    fn td_claim(a: Action) -> i64 {
        match a {
            Action::A0 => 2,
            Action::A1 => 3,
            Action::A2 => 4,
            Action::A3 => 5,
        }
    }

    /// Per-player payoffs for one joint action profile.
    pub fn payoff(&self, joint: &[Action]) -> Result<Vec<Points>> {
        self.check_joint(joint)?;
        Ok(match self.kind {
            GameKind::PD => {
                // T=300, R=200, P=100, S=-100.
                let pay = |own: Action, other: Action| match (own, other) {
                    (Action::A0, Action::A0) => Points::from_int(200),
                    (Action::A1, Action::A1) => Points::from_int(100),
                    (Action::A1, Action::A0) => Points::from_int(300),
                    _ => Points::from_int(-100),
                };
                vec![pay(joint[0], joint[1]), pay(joint[1], joint[0])]
            }
            GameKind::TD => {
                let (c0, c1) = (Self::td_claim(joint[0]), Self::td_claim(joint[1]));
                if c0 == c1 {
                    vec![Points::from_int(c0), Points::from_int(c1)]
                } else {
                    let low = c0.min(c1);
                    let adjust = |own: i64| {
                        if own == low {
                            Points::from_int(low + 2)
                        } else {
                            Points::from_int(low - 2)
                        }
                    };
                    vec![adjust(c0), adjust(c1)]
                }
            }
            GameKind::PG => {
                // Endowment 1, multiplier 1.5, pool split three ways:
                // each contributor adds 0.5 to every player.
                let k = joint.iter().filter(|a| **a == Action::A0).count() as i64;
                let share = Points::from_tenths(5 * k);
                joint
                    .iter()
                    .map(|a| {
                        if *a == Action::A0 {
                            share
                        } else {
                            Points::from_int(1) + share
                        }
                    })
                    .collect()
            }
            GameKind::TG => {
                // Each player's payoff comes from their own focal table:
                // T=20 > R=10 > P=4 > S=2.
                let pay = |own: Action, other: Action| match (own, other) {
                    (Action::A0, Action::A0) => Points::from_int(10),
                    (Action::A1, Action::A1) => Points::from_int(4),
                    (Action::A1, Action::A0) => Points::from_int(20),
                    _ => Points::from_int(2),
                };
                vec![pay(joint[0], joint[1]), pay(joint[1], joint[0])]
            }
        })
    }

    /// Whether `a` is the game's strictly cooperative action.
    pub fn is_cooperative(&self, a: Action) -> Result<bool> {
        if !self.valid_actions().contains(&a) {
            return Err(Error::InvalidAction {
                game: self.kind.name().to_string(),
                action: a.label().to_string(),
            });
        }
        Ok(a == self.cooperative_action())
    }

    pub fn reference_profiles(&self) -> ReferenceProfiles {
        let rep = |a: Action| vec![a; self.n_players];
        match self.kind {
            GameKind::TD => ReferenceProfiles {
                nash: rep(Action::A0),
                social_optimum: rep(Action::A3),
            },
            _ => ReferenceProfiles {
                nash: rep(Action::A1),
                social_optimum: rep(Action::A0),
            },
        }
    }

    /// All joint-action profiles of the game (cartesian product).
    pub fn all_profiles(&self) -> Vec<Vec<Action>> {
        let actions = self.valid_actions();
        let mut profiles: Vec<Vec<Action>> = vec![vec![]];
        for _ in 0..self.n_players {
            profiles = profiles
                .into_iter()
                .flat_map(|p| {
                    actions.iter().map(move |a| {
                        let mut q = p.clone();
                        q.push(*a);
                        q
                    })
                })
                .collect();
        }
        profiles
    }
}
