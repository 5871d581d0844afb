//! Types shared by the two intermediary-matching back ends.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};

/// Which neighbor-structure back end produces the route distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Hard-set Jaccard over k-reciprocal neighbor sets; routes in `[0, 1]`.
    Kr,
    /// Negative cosine between one-hop neighbor encodings; routes in `[-1, 1]`.
    Gnn,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Kr => "kr",
            Mode::Gnn => "gnn",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kr" => Ok(Mode::Kr),
            "gnn" => Ok(Mode::Gnn),
            other => Err(Error::config("mode", format!("expected kr or gnn, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Route {
    A,
    B,
    C,
}

impl Route {
    pub const ALL: [Route; 3] = [Route::A, Route::B, Route::C];
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::A => "A",
            Route::B => "B",
            Route::C => "C",
        })
    }
}

/// Query x gallery distances for the three intermediary routes and the two
/// direct terms computed on the original feature.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteDistanceSet {
    pub d_a: DistanceMatrix,
    pub d_b: DistanceMatrix,
    pub d_c: DistanceMatrix,
    /// Plain cosine distance on `f_o`, in `[0, 2]`.
    pub d_direct: DistanceMatrix,
    /// Re-ranked distance on `f_o` (Jaccard or encoding cosine, per mode).
    pub d_o: DistanceMatrix,
}

impl RouteDistanceSet {
    pub fn shape(&self) -> (usize, usize) {
        self.d_a.shape()
    }

    pub fn named(&self) -> [(&'static str, &DistanceMatrix); 5] {
        [
            ("d_A", &self.d_a),
            ("d_B", &self.d_b),
            ("d_C", &self.d_c),
            ("d_direct", &self.d_direct),
            ("d_o", &self.d_o),
        ]
    }

    pub fn route(&self, route: Route) -> &DistanceMatrix {
        match route {
            Route::A => &self.d_a,
            Route::B => &self.d_b,
            Route::C => &self.d_c,
        }
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let shape = self.d_a.shape();
        for (_, m) in self.named() {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    context: "route distance set",
                    left: shape,
                    right: m.shape(),
                });
            }
        }
        Ok(())
    }
}

/// First-hop candidates of every query along each route, in rank order.
/// Positions are union sample ids. In k-reciprocal mode the lists are the
/// reciprocal sets; in GNN mode they are plain nearest-neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstHops {
    pub mode: Mode,
    pub a: Vec<Vec<usize>>,
    pub b: Vec<Vec<usize>>,
    pub c: Vec<Vec<usize>>,
}

impl FirstHops {
    pub fn route(&self, route: Route) -> &[Vec<usize>] {
        match route {
            Route::A => &self.a,
            Route::B => &self.b,
            Route::C => &self.c,
        }
    }
}

/// Everything the feasibility weighting needs from a matching run.
#[derive(Debug, Clone)]
pub struct MatchingContext {
    pub mode: Mode,
    pub k: usize,
    pub queries: Vec<usize>,
    pub gallery: Vec<usize>,
    /// Union x union cosine distances on `f_re` and `f_ir`.
    pub d_re: DistanceMatrix,
    pub d_ir: DistanceMatrix,
    /// Raw route-A distances from each query to every union sample.
    pub d_a_query_union: DistanceMatrix,
    pub hops: FirstHops,
    pub routes: RouteDistanceSet,
}
