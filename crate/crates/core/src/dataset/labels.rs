use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The twelve recognition classes: eleven vessel types and natural noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Dredger,
    FishBoat,
    Motorboat,
    MusselBoat,
    NaturalNoise,
    OceanLiner,
    PassengerShip,
    PilotShip,
    RoroShip,
    Sailboat,
    Trawler,
    Tugboat,
}

impl Category {
    pub const COUNT: usize = 12;

    pub const ALL: [Category; 12] = [
        Category::Dredger,
        Category::FishBoat,
        Category::Motorboat,
        Category::MusselBoat,
        Category::NaturalNoise,
        Category::OceanLiner,
        Category::PassengerShip,
        Category::PilotShip,
        Category::RoroShip,
        Category::Sailboat,
        Category::Trawler,
        Category::Tugboat,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Dredger => "Dredger",
            Category::FishBoat => "Fish boat",
            Category::Motorboat => "Motorboat",
            Category::MusselBoat => "Mussel boat",
            Category::NaturalNoise => "Natural noise",
            Category::OceanLiner => "Ocean liner",
            Category::PassengerShip => "Passenger ship",
            Category::PilotShip => "Pilot ship",
            Category::RoroShip => "RO-RO ship",
            Category::Sailboat => "Sailboat",
            Category::Trawler => "Trawler",
            Category::Tugboat => "Tugboat",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        let cat = match key.as_str() {
            "dredger" => Category::Dredger,
            "fishboat" | "fishingboat" => Category::FishBoat,
            "motorboat" => Category::Motorboat,
            "musselboat" => Category::MusselBoat,
            "naturalnoise" | "natural" | "noise" => Category::NaturalNoise,
            "oceanliner" => Category::OceanLiner,
            "passengership" | "passenger" | "passengers" => Category::PassengerShip,
            "pilotship" | "pilot" | "pilotboat" => Category::PilotShip,
            "roroship" | "roro" => Category::RoroShip,
            "sailboat" => Category::Sailboat,
            "trawler" => Category::Trawler,
            "tugboat" | "tug" => Category::Tugboat,
            _ => return Err(Error::InvalidInput(format!("unknown category `{s}`"))),
        };
        Ok(cat)
    }
}

/// An influential factor estimated by an auxiliary task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxFactor {
    #[serde(alias = "source_range")]
    Range,
    Depth,
    Wind,
}

impl AuxFactor {
    pub const ALL: [AuxFactor; 3] = [AuxFactor::Range, AuxFactor::Depth, AuxFactor::Wind];

    /// Number of mapped classes.
    pub fn n_aux(self) -> usize {
        match self {
            AuxFactor::Range => 2,
            AuxFactor::Depth | AuxFactor::Wind => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn unit(self) -> &'static str {
        match self {
            AuxFactor::Range | AuxFactor::Depth => "m",
            AuxFactor::Wind => "km/h",
        }
    }

    pub fn class_name(self, class: usize) -> &'static str {
        match (self, class) {
            (AuxFactor::Range, 0) => "close source range",
            (AuxFactor::Range, 1) => "medium source range",
            (AuxFactor::Depth, 0) => "land-sea interface",
            (AuxFactor::Depth, 1) => "shallow water",
            (AuxFactor::Depth, 2) => "deep water",
            (AuxFactor::Wind, 0) => "calm",
            (AuxFactor::Wind, 1) => "light air/breeze",
            (AuxFactor::Wind, 2) => "gentle breeze",
            _ => "invalid",
        }
    }
}

impl fmt::Display for AuxFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxFactor::Range => "source range",
            AuxFactor::Depth => "water column depth",
            AuxFactor::Wind => "wind speed",
        })
    }
}

impl FromStr for AuxFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "range" | "source_range" => Ok(AuxFactor::Range),
            "depth" | "water_column_depth" => Ok(AuxFactor::Depth),
            "wind" | "wind_speed" => Ok(AuxFactor::Wind),
            other => Err(Error::InvalidInput(format!("unknown factor `{other}`"))),
        }
    }
}

/// Maps an annotation onto its auxiliary class.
///
/// `None` in means the annotation is absent; `None` out means the sample is
/// excluded from auxiliary training. Interval boundaries:
///
/// | factor | class 0 | class 1 | class 2 |
/// |--------|---------|---------|---------|
/// | range (m) | 0 < s < 50 | 50 <= s <= 350 | |
/// | depth (m) | 0 < d < 6 | 6 <= d <= 12 | 12 < d <= 20 |
/// | wind (km/h) | w = 0 | 0 < w < 11 | 11 <= w <= 18 |
pub fn map_aux_label(factor: AuxFactor, value: Option<f64>) -> Result<Option<usize>> {
    let Some(v) = value else {
        return Ok(None);
    };
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!("{factor} value {v} is not finite")));
    }
    let class = match factor {
        AuxFactor::Range if v > 0.0 && v < 50.0 => 0,
        AuxFactor::Range if (50.0..=350.0).contains(&v) => 1,
        AuxFactor::Depth if v > 0.0 && v < 6.0 => 0,
        AuxFactor::Depth if (6.0..=12.0).contains(&v) => 1,
        AuxFactor::Depth if v > 12.0 && v <= 20.0 => 2,
        AuxFactor::Wind if v == 0.0 => 0,
        AuxFactor::Wind if v > 0.0 && v < 11.0 => 1,
        AuxFactor::Wind if (11.0..=18.0).contains(&v) => 2,
        _ => return Err(Error::OutOfMappingRange { factor, value: v }),
    };
    Ok(Some(class))
}

/// Auxiliary class (or exclusion) for each of the three factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuxLabels(pub [Option<usize>; 3]);

impl AuxLabels {
    pub fn get(&self, factor: AuxFactor) -> Option<usize> {
        self.0[factor.index()]
    }

    pub fn set(&mut self, factor: AuxFactor, class: Option<usize>) {
        self.0[factor.index()] = class;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_round_trip() {
        for (i, c) in Category::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.name().parse::<Category>().unwrap(), *c);
        }
        assert_eq!("RO-RO ship".parse::<Category>().unwrap(), Category::RoroShip);
        assert_eq!("Pilotship".parse::<Category>().unwrap(), Category::PilotShip);
        assert!("submarine".parse::<Category>().is_err());
    }

    #[test]
    fn table_boundaries() {
        let m = |f, v: f64| map_aux_label(f, Some(v)).unwrap();
        assert_eq!(m(AuxFactor::Range, 49.99), Some(0));
        assert_eq!(m(AuxFactor::Range, 50.0), Some(1));
        assert_eq!(m(AuxFactor::Range, 350.0), Some(1));
        assert_eq!(m(AuxFactor::Depth, 5.99), Some(0));
        assert_eq!(m(AuxFactor::Depth, 6.0), Some(1));
        assert_eq!(m(AuxFactor::Depth, 12.0), Some(1));
        assert_eq!(m(AuxFactor::Depth, 12.0001), Some(2));
        assert_eq!(m(AuxFactor::Depth, 20.0), Some(2));
        assert_eq!(m(AuxFactor::Wind, 0.0), Some(0));
        assert_eq!(m(AuxFactor::Wind, 10.99), Some(1));
        assert_eq!(m(AuxFactor::Wind, 11.0), Some(2));
        assert_eq!(m(AuxFactor::Wind, 18.0), Some(2));
        assert_eq!(map_aux_label(AuxFactor::Wind, None).unwrap(), None);
    }

    #[test]
    fn outside_intervals_is_an_error() {
        for (f, v) in [(AuxFactor::Range, 350.5), (AuxFactor::Range, 0.0), (AuxFactor::Depth, 20.5), (AuxFactor::Wind, 18.1)]
        {
            assert!(matches!(map_aux_label(f, Some(v)), Err(Error::OutOfMappingRange { .. })), "{f} {v}");
        }
        assert!(matches!(map_aux_label(AuxFactor::Wind, Some(-1.0)), Err(Error::OutOfMappingRange { .. })));
    }

    #[test]
    fn aux_class_counts() {
        assert_eq!(AuxFactor::Range.n_aux(), 2);
        assert_eq!(AuxFactor::Depth.n_aux(), 3);
        assert_eq!(AuxFactor::Wind.n_aux(), 3);
        assert_eq!("wind".parse::<AuxFactor>().unwrap(), AuxFactor::Wind);
        assert_eq!("source-range".parse::<AuxFactor>().unwrap(), AuxFactor::Range);
    }
}
