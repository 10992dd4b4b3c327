//! Seeded lifestyle protocol: seasons of 13 weeks, weeks of 7 days, and
//! per-day meal and exercise templates scaled by bodyweight.
//!
//! Season and week compositions are fixed tables; only the order of week
//! types within a season and of day types within a week is random. Clock
//! times and slot sizes are defaults from [`ScenarioConfig`] and can be
//! overridden from TOML.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::MINUTES_PER_DAY;

pub const WEEKS_PER_SEASON: usize = 13;
pub const DAYS_PER_WEEK: usize = 7;

macro_rules! labels {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "kebab-case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} `{s}`", stringify!($name))),
                }
            }
        }
    };
}

labels!(Season {
    Winter => "winter",
    Spring => "spring",
    Summer => "summer",
    Autumn => "autumn",
});

labels!(WeekType {
    Standard => "standard",
    Active => "active",
    Vacation => "vacation",
});

labels!(DayType {
    Standard => "standard",
    Active => "active",
    MovieNight => "movie-night",
    LateNight => "late-night",
});

labels!(MealSize {
    Large => "large",
    Medium => "medium",
    Small => "small",
    Snack => "snack",
});

impl MealSize {
    /// g CHO per kg bodyweight.
    pub fn grams_per_kg(self) -> f64 {
        match self {
            MealSize::Large => 1.29,
            MealSize::Medium => 0.86,
            MealSize::Small => 0.57,
            MealSize::Snack => 0.29,
        }
    }
}

impl Season {
    pub fn of_date(date: NaiveDate) -> Season {
        match date.month() {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub fn next(self) -> Season {
        match self {
            Season::Winter => Season::Spring,
            Season::Spring => Season::Summer,
            Season::Summer => Season::Autumn,
            Season::Autumn => Season::Winter,
        }
    }

    /// Number of (standard, active, vacation) weeks.
    pub fn composition(self) -> [(WeekType, usize); 3] {
        let (s, a, v) = match self {
            Season::Winter => (6, 4, 3),
            Season::Spring => (6, 6, 1),
            Season::Summer => (7, 3, 3),
            Season::Autumn => (9, 3, 1),
        };
        [
            (WeekType::Standard, s),
            (WeekType::Active, a),
            (WeekType::Vacation, v),
        ]
    }

    /// Spring and summer swap the large dinner for a medium one and move
    /// the afternoon snack to mid-morning.
    pub fn is_warm(self) -> bool {
        matches!(self, Season::Spring | Season::Summer)
    }
}

impl WeekType {
    /// Number of (standard, active, movie-night, late-night) days.
    pub fn composition(self) -> [(DayType, usize); 4] {
        let (s, a, m, l) = match self {
            WeekType::Standard => (4, 1, 1, 1),
            WeekType::Active => (3, 3, 1, 0),
            WeekType::Vacation => (5, 0, 0, 2),
        };
        [
            (DayType::Standard, s),
            (DayType::Active, a),
            (DayType::MovieNight, m),
            (DayType::LateNight, l),
        ]
    }
}

/// Clock offsets (minutes after midnight) of the daily slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlotTimes {
    pub breakfast: f64,
    pub morning_snack: f64,
    pub lunch: f64,
    pub afternoon_snack: f64,
    pub dinner: f64,
    pub movie_snack: f64,
    /// May exceed 1440 (after midnight of the following day).
    pub late_meal: f64,
    pub exercise_start: f64,
}

impl Default for SlotTimes {
    fn default() -> Self {
        SlotTimes {
            breakfast: 7.0 * 60.0,
            morning_snack: 10.0 * 60.0,
            lunch: 12.0 * 60.0,
            afternoon_snack: 15.0 * 60.0,
            dinner: 18.0 * 60.0,
            movie_snack: 21.0 * 60.0,
            late_meal: 25.0 * 60.0,
            exercise_start: 17.0 * 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlotSizes {
    pub breakfast: MealSize,
    pub lunch: MealSize,
    /// Dinner in autumn and winter.
    pub dinner_cold: MealSize,
    /// Dinner in spring and summer.
    pub dinner_warm: MealSize,
    pub snack: MealSize,
    pub movie_snack: MealSize,
    pub late_meal: MealSize,
}

impl Default for SlotSizes {
    fn default() -> Self {
        SlotSizes {
            breakfast: MealSize::Small,
            lunch: MealSize::Medium,
            dinner_cold: MealSize::Large,
            dinner_warm: MealSize::Medium,
            snack: MealSize::Snack,
            movie_snack: MealSize::Snack,
            late_meal: MealSize::Small,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub times: SlotTimes,
    pub sizes: SlotSizes,
    /// Time over which a meal is eaten (min).
    pub consumption_min: f64,
    pub exercise_duration_min: f64,
    pub exercise_intensity: f64,
    pub announce_meals: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            times: SlotTimes::default(),
            sizes: SlotSizes::default(),
            consumption_min: 5.0,
            exercise_duration_min: 60.0,
            exercise_intensity: 0.5,
            announce_meals: true,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.times;
        let same_day = [
            ("times.breakfast", t.breakfast),
            ("times.morning_snack", t.morning_snack),
            ("times.lunch", t.lunch),
            ("times.afternoon_snack", t.afternoon_snack),
            ("times.dinner", t.dinner),
            ("times.movie_snack", t.movie_snack),
            ("times.exercise_start", t.exercise_start),
        ];
        for (i, &(name, v)) in same_day.iter().enumerate() {
            if !(0.0..MINUTES_PER_DAY).contains(&v) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must lie in [0, 1440) min, got {v}"),
                });
            }
            if same_day[..i].iter().any(|&(_, w)| w == v) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "slot times must be distinct".into(),
                });
            }
        }
        let earliest = same_day.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let late_clash = same_day
            .iter()
            .any(|&(_, w)| w == t.late_meal || w == t.late_meal - MINUTES_PER_DAY);
        if !(t.late_meal >= 0.0 && t.late_meal < MINUTES_PER_DAY + earliest) || late_clash {
            return Err(Error::InvalidParameter {
                name: "times.late_meal",
                reason: "must be distinct and precede the next day's first slot".into(),
            });
        }
        if !(self.consumption_min.is_finite() && self.consumption_min > 0.0) {
            return Err(Error::InvalidParameter {
                name: "consumption_min",
                reason: "must be > 0".into(),
            });
        }
        if !(self.exercise_duration_min >= 0.0 && self.exercise_duration_min < MINUTES_PER_DAY) {
            return Err(Error::InvalidParameter {
                name: "exercise_duration_min",
                reason: "must lie in [0, 1440)".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.exercise_intensity) {
            return Err(Error::InvalidParameter {
                name: "exercise_intensity",
                reason: "must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MealEvent {
    /// Minutes since the scenario start.
    pub time: f64,
    pub size: MealSize,
    pub grams_per_kg: f64,
    /// Absolute carbohydrate content (g CHO).
    pub grams: f64,
    pub announced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExerciseEvent {
    pub start: f64,
    pub duration: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Meal(MealEvent),
    Exercise(ExerciseEvent),
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::Meal(m) => m.time,
            Event::Exercise(e) => e.start,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayLabel {
    pub date: NaiveDate,
    pub season: Season,
    pub week_type: WeekType,
    pub day_type: DayType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start_date: NaiveDate,
    pub weeks: usize,
    pub bodyweight: f64,
    pub consumption_min: f64,
    pub events: Vec<Event>,
    pub days: Vec<DayLabel>,
}

impl Scenario {
    pub fn duration_min(&self) -> f64 {
        (self.weeks * DAYS_PER_WEEK) as f64 * MINUTES_PER_DAY
    }

    pub fn week_labels(&self) -> Vec<WeekType> {
        self.days
            .chunks(DAYS_PER_WEEK)
            .map(|w| w[0].week_type)
            .collect()
    }

    pub fn season_labels(&self) -> Vec<Season> {
        self.days
            .chunks(DAYS_PER_WEEK)
            .map(|w| w[0].season)
            .collect()
    }

    pub fn meals(&self) -> impl Iterator<Item = &MealEvent> {
        self.events.iter().filter_map(|e| match e {
            Event::Meal(m) => Some(m),
            _ => None,
        })
    }

    /// An event-free scenario of the given length.
    pub fn empty(start_date: NaiveDate, weeks: usize, bodyweight: f64) -> Scenario {
        Scenario {
            start_date,
            weeks,
            bodyweight,
            consumption_min: 5.0,
            events: Vec::new(),
            days: Vec::new(),
        }
    }
}

fn expand<T: Copy>(composition: &[(T, usize)]) -> Vec<T> {
    composition
        .iter()
        .flat_map(|&(label, n)| std::iter::repeat_n(label, n))
        .collect()
}

fn day_events(
    cfg: &ScenarioConfig,
    season: Season,
    day_type: DayType,
    day_start: f64,
    bodyweight: f64,
    out: &mut Vec<Event>,
) {
    let t = &cfg.times;
    let s = &cfg.sizes;
    let mut meal = |offset: f64, size: MealSize| {
        out.push(Event::Meal(MealEvent {
            time: day_start + offset,
            size,
            grams_per_kg: size.grams_per_kg(),
            grams: size.grams_per_kg() * bodyweight,
            announced: cfg.announce_meals,
        }))
    };
    meal(t.breakfast, s.breakfast);
    meal(t.lunch, s.lunch);
    if season.is_warm() {
        meal(t.morning_snack, s.snack);
        meal(t.dinner, s.dinner_warm);
    } else {
        meal(t.afternoon_snack, s.snack);
        meal(t.dinner, s.dinner_cold);
    }
    match day_type {
        DayType::MovieNight => meal(t.movie_snack, s.movie_snack),
        DayType::LateNight => meal(t.late_meal, s.late_meal),
        DayType::Standard | DayType::Active => {}
    }
    if day_type == DayType::Active && cfg.exercise_duration_min > 0.0 {
        out.push(Event::Exercise(ExerciseEvent {
            start: day_start + t.exercise_start,
            duration: cfg.exercise_duration_min,
            intensity: cfg.exercise_intensity,
        }));
    }
}

/// Generates a `weeks`-long scenario. Seasons follow each other in blocks of
/// 13 weeks starting with the season of `start_date`. Events falling after
/// the end of the scenario are dropped.
pub fn generate(
    seed: u64,
    start_date: NaiveDate,
    weeks: usize,
    bodyweight: f64,
    cfg: &ScenarioConfig,
) -> Result<Scenario> {
    if weeks == 0 {
        return Err(Error::InvalidParameter {
            name: "weeks",
            reason: "must be >= 1".into(),
        });
    }
    if !(bodyweight.is_finite() && bodyweight > 0.0) {
        return Err(Error::InvalidParameter {
            name: "bodyweight",
            reason: format!("must be > 0, got {bodyweight}"),
        });
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut week_plan: Vec<(Season, WeekType)> = Vec::with_capacity(weeks);
    let mut season = Season::of_date(start_date);
    while week_plan.len() < weeks {
        let mut block = expand(&season.composition());
        block.shuffle(&mut rng);
        let take = (weeks - week_plan.len()).min(WEEKS_PER_SEASON);
        week_plan.extend(block.into_iter().take(take).map(|w| (season, w)));
        season = season.next();
    }

    let mut days = Vec::with_capacity(weeks * DAYS_PER_WEEK);
    let mut events = Vec::new();
    for (season, week_type) in week_plan {
        let mut week = expand(&week_type.composition());
        week.shuffle(&mut rng);
        for day_type in week {
            let index = days.len();
            let day_start = index as f64 * MINUTES_PER_DAY;
            days.push(DayLabel {
                date: start_date + Duration::days(index as i64),
                season,
                week_type,
                day_type,
            });
            day_events(cfg, season, day_type, day_start, bodyweight, &mut events);
        }
    }
    let horizon = (weeks * DAYS_PER_WEEK) as f64 * MINUTES_PER_DAY;
    events.retain(|e| e.time() < horizon);
    events.sort_by(|a, b| a.time().total_cmp(&b.time()));

    Ok(Scenario {
        start_date,
        weeks,
        bodyweight,
        consumption_min: cfg.consumption_min,
        events,
        days,
    })
}

/// Per-interval disturbance sequence on the control grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ZohSeries {
    pub ts: f64,
    /// g CHO/min per interval.
    pub carb_rate: Vec<f64>,
    /// Exercise intensity per interval.
    pub exercise: Vec<f64>,
    /// Carbohydrates (g) announced to the controller at each interval.
    pub announced_carbs: Vec<f64>,
}

impl ZohSeries {
    pub fn len(&self) -> usize {
        self.carb_rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.carb_rate.is_empty()
    }
}

/// Converts events to zero-order-hold inputs over the scenario duration.
///
/// A meal starting at time `t` is snapped to the interval containing `t` and
/// spread evenly over `ceil(consumption_min / ts)` intervals; its full
/// carbohydrate content is announced at the first of them. Each interval
/// whose start lies inside an exercise block gets that block's intensity.
pub fn to_zoh_series(scenario: &Scenario, ts: f64) -> Result<ZohSeries> {
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::InvalidParameter {
            name: "ts",
            reason: format!("must be > 0, got {ts}"),
        });
    }
    let n = (scenario.duration_min() / ts).round() as usize;
    let mut carb_rate = vec![0.0; n];
    let mut exercise = vec![0.0; n];
    let mut announced = vec![0.0; n];
    let spread = ((scenario.consumption_min / ts) - 1e-9).ceil().max(1.0) as usize;
    for event in &scenario.events {
        match event {
            Event::Meal(m) => {
                let k0 = (m.time / ts).floor() as usize;
                if k0 >= n {
                    continue;
                }
                let rate = m.grams / (spread as f64 * ts);
                for rate_k in carb_rate.iter_mut().skip(k0).take(spread) {
                    *rate_k += rate;
                }
                if m.announced {
                    announced[k0] += m.grams;
                }
            }
            Event::Exercise(e) => {
                let k0 = (e.start / ts).ceil() as usize;
                let k1 = (((e.start + e.duration) / ts).ceil() as usize).min(n);
                for ex in exercise.iter_mut().take(k1).skip(k0) {
                    *ex = f64::max(*ex, e.intensity);
                }
            }
        }
    }
    Ok(ZohSeries {
        ts,
        carb_rate,
        exercise,
        announced_carbs: announced,
    })
}

pub const SCENARIO_FORMAT_HEADER: &str = "# apsim-scenario v1";

/// Writes the line-oriented event format:
///
/// ```text
/// # apsim-scenario v1
/// start_date <YYYY-MM-DD>
/// weeks <n>
/// bodyweight <kg>
/// consumption_min <min>
/// day <index> <date> <season> <week-type> <day-type>
/// meal <t_min> <size> <g_per_kg> <grams> <announced 0|1>
/// exercise <t_min> <duration_min> <intensity>
/// ```
///
/// Times are minutes since the scenario start.
pub fn write_events(scenario: &Scenario) -> String {
    let mut s = String::new();
    writeln!(s, "{SCENARIO_FORMAT_HEADER}").unwrap();
    writeln!(s, "start_date {}", scenario.start_date).unwrap();
    writeln!(s, "weeks {}", scenario.weeks).unwrap();
    writeln!(s, "bodyweight {}", scenario.bodyweight).unwrap();
    writeln!(s, "consumption_min {}", scenario.consumption_min).unwrap();
    for (i, d) in scenario.days.iter().enumerate() {
        writeln!(
            s,
            "day {i} {} {} {} {}",
            d.date, d.season, d.week_type, d.day_type
        )
        .unwrap();
    }
    for e in &scenario.events {
        match e {
            Event::Meal(m) => writeln!(
                s,
                "meal {} {} {} {} {}",
                m.time, m.size, m.grams_per_kg, m.grams, m.announced as u8
            )
            .unwrap(),
            Event::Exercise(x) => {
                writeln!(s, "exercise {} {} {}", x.start, x.duration, x.intensity).unwrap()
            }
        }
    }
    s
}

/// Parses the format written by [`write_events`].
pub fn read_events(text: &str) -> Result<Scenario> {
    fn field<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
        tok.ok_or_else(|| Error::Format {
            line,
            reason: format!("missing {what}"),
        })?
        .parse()
        .map_err(|_| Error::Format {
            line,
            reason: format!("bad {what}"),
        })
    }

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == SCENARIO_FORMAT_HEADER => {}
        _ => {
            return Err(Error::Format {
                line: 1,
                reason: format!("expected `{SCENARIO_FORMAT_HEADER}`"),
            })
        }
    }
    let mut start_date = None;
    let mut weeks = None;
    let mut bodyweight = None;
    let mut consumption_min = 5.0;
    let mut events = Vec::new();
    let mut days = Vec::new();
    for (i, raw) in lines {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next().unwrap() {
            "start_date" => start_date = Some(field::<NaiveDate>(tok.next(), ln, "date")?),
            "weeks" => weeks = Some(field::<usize>(tok.next(), ln, "weeks")?),
            "bodyweight" => bodyweight = Some(field::<f64>(tok.next(), ln, "bodyweight")?),
            "consumption_min" => consumption_min = field(tok.next(), ln, "consumption_min")?,
            "day" => {
                let _index: usize = field(tok.next(), ln, "day index")?;
                days.push(DayLabel {
                    date: field(tok.next(), ln, "date")?,
                    season: field(tok.next(), ln, "season")?,
                    week_type: field(tok.next(), ln, "week type")?,
                    day_type: field(tok.next(), ln, "day type")?,
                });
            }
            "meal" => {
                let time = field(tok.next(), ln, "time")?;
                let size = field(tok.next(), ln, "size")?;
                let grams_per_kg = field(tok.next(), ln, "g/kg")?;
                let grams = field(tok.next(), ln, "grams")?;
                let announced: u8 = field(tok.next(), ln, "announced flag")?;
                events.push(Event::Meal(MealEvent {
                    time,
                    size,
                    grams_per_kg,
                    grams,
                    announced: announced != 0,
                }));
            }
            "exercise" => events.push(Event::Exercise(ExerciseEvent {
                start: field(tok.next(), ln, "start")?,
                duration: field(tok.next(), ln, "duration")?,
                intensity: field(tok.next(), ln, "intensity")?,
            })),
            other => {
                return Err(Error::Format {
                    line: ln,
                    reason: format!("unknown record `{other}`"),
                })
            }
        }
    }
    let missing = |what: &str| Error::Format {
        line: 0,
        reason: format!("missing `{what}` record"),
    };
    Ok(Scenario {
        start_date: start_date.ok_or_else(|| missing("start_date"))?,
        weeks: weeks.ok_or_else(|| missing("weeks"))?,
        bodyweight: bodyweight.ok_or_else(|| missing("bodyweight"))?,
        consumption_min,
        events,
        days,
    })
}
