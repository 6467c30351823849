//! Closed datetime and duration grammars with resolution against a
//! reference instant.

use chrono::{
    DateTime, Datelike, Duration, FixedOffset, Months, NaiveDate, NaiveTime, TimeZone, Weekday,
};

use super::number::{integer_at, ordinal_at};
use super::{DurationValue, Grain, InstantTime, Precision};
use crate::error::{Error, Result};

pub(crate) const GRAMMAR: &str = "\
datetime (closed grammar, tokens are normalized words or digits):
  <datetime>  ::= tonight
                | this <daypart>
                | <day-expr> [<daypart>]
                | in <count> <unit>
                | at <hour> [[:] <minutes>] [am|pm]
                | next week|month|year
  <day-expr>  ::= today | tomorrow | yesterday
                | this <weekday> | next <weekday>
                | <month-name> <day-number>
  <daypart>   ::= morning (08:00) | afternoon (14:00) | evening (19:00) | night (22:00)
  <weekday>   ::= monday | tuesday | wednesday | thursday | friday | saturday | sunday
  <month-name>::= january | february | ... | december
  <day-number>::= 1..31 as digits, cardinal words or ordinals (\"19th\", \"nineteenth\")
  <count>     ::= <number> | a | an
  <unit>      ::= minute[s] | hour[s] | day[s] | week[s] | month[s]
  <hour>      ::= 0..23, or 1..12 when followed by am|pm
  <minutes>   ::= 0..59
resolution:
  today|tomorrow|yesterday -> that day at 00:00, grain Day
  this <weekday>           -> first such weekday on or after the reference date
  next <weekday>           -> first such weekday strictly after the reference date
  <month-name> <day>       -> that date in the reference year, or the next year if already past
  <day-expr> <daypart>     -> that day at the daypart hour, grain Hour, approximate
  tonight                  -> today at 22:00; this <daypart> -> today at the daypart hour
  in <count> <unit>        -> reference instant plus the amount, grain of the unit
  at <hour>...             -> today at that time, grain Hour (Minute when minutes are given)
  next week|month|year     -> start of the following week (Monday) / month / year
duration:
  <duration>  ::= <part> ([and] <part>)*
  <part>      ::= <count> second[s]|minute[s]|hour[s]|day[s]|week[s]|month[s]|year[s]
  weeks are folded into days (1 week = 7 days)
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Daypart {
    Morning,
    Afternoon,
    Evening,
    Night,
}

impl Daypart {
    fn parse(word: &str) -> Option<Self> {
        match word {
            "morning" => Some(Daypart::Morning),
            "afternoon" => Some(Daypart::Afternoon),
            "evening" => Some(Daypart::Evening),
            "night" => Some(Daypart::Night),
            _ => None,
        }
    }

    fn hour(self) -> u32 {
        match self {
            Daypart::Morning => 8,
            Daypart::Afternoon => 14,
            Daypart::Evening => 19,
            Daypart::Night => 22,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DayExpr {
    Today,
    Tomorrow,
    Yesterday,
    ThisWeekday(Weekday),
    NextWeekday(Weekday),
    MonthDay(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RelUnit {
    Minute,
    Hour,
    Day,
    Week,
    Month,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Period {
    Week,
    Month,
    Year,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expr {
    Day(DayExpr, Option<Daypart>),
    Tonight,
    ThisPart(Daypart),
    In(i64, RelUnit),
    At {
        hour: u32,
        minute: Option<u32>,
        pm: Option<bool>,
    },
    Next(Period),
}

fn weekday(word: &str) -> Option<Weekday> {
    Some(match word {
        "monday" => Weekday::Mon,
        "tuesday" => Weekday::Tue,
        "wednesday" => Weekday::Wed,
        "thursday" => Weekday::Thu,
        "friday" => Weekday::Fri,
        "saturday" => Weekday::Sat,
        "sunday" => Weekday::Sun,
        _ => return None,
    })
}

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

fn month(word: &str) -> Option<u32> {
    MONTHS.iter().position(|m| *m == word).map(|p| p as u32 + 1)
}

fn rel_unit(word: &str) -> Option<RelUnit> {
    Some(match word {
        "minute" | "minutes" => RelUnit::Minute,
        "hour" | "hours" => RelUnit::Hour,
        "day" | "days" => RelUnit::Day,
        "week" | "weeks" => RelUnit::Week,
        "month" | "months" => RelUnit::Month,
        _ => return None,
    })
}

/// `<count>`: an integer, or the article "a"/"an" meaning one.
fn count_at(words: &[&str], i: usize) -> Option<(i64, usize)> {
    match words.get(i) {
        Some(&"a") | Some(&"an") => Some((1, 1)),
        _ => integer_at(words, i),
    }
}

fn day_number_at(words: &[&str], i: usize) -> Option<(u32, usize)> {
    ordinal_at(words, i)
        .or_else(|| integer_at(words, i))
        .filter(|(d, _)| (1..=31).contains(d))
        .map(|(d, len)| (d as u32, len))
}

fn day_expr_at(words: &[&str], i: usize) -> Option<(DayExpr, usize)> {
    let first = *words.get(i)?;
    match first {
        "today" => Some((DayExpr::Today, 1)),
        "tomorrow" => Some((DayExpr::Tomorrow, 1)),
        "yesterday" => Some((DayExpr::Yesterday, 1)),
        "this" | "next" => {
            let wd = weekday(words.get(i + 1)?)?;
            let expr = if first == "this" {
                DayExpr::ThisWeekday(wd)
            } else {
                DayExpr::NextWeekday(wd)
            };
            Some((expr, 2))
        }
        _ => {
            let m = month(first)?;
            let (d, len) = day_number_at(words, i + 1)?;
            Some((DayExpr::MonthDay(m, d), 1 + len))
        }
    }
}

fn meridiem(word: Option<&&str>) -> Option<bool> {
    match word {
        Some(&"am") => Some(false),
        Some(&"pm") => Some(true),
        _ => None,
    }
}

fn at_time(words: &[&str], i: usize) -> Option<(Expr, usize)> {
    if words.get(i) != Some(&"at") {
        return None;
    }
    let (hour, hour_len) = integer_at(words, i + 1)?;
    let mut j = i + 1 + hour_len;
    let mut minute = None;
    let colon = words.get(j) == Some(&":");
    let minute_start = if colon { j + 1 } else { j };
    if let Some((m, len)) = integer_at(words, minute_start).filter(|(m, _)| (0..60).contains(m)) {
        minute = Some(m as u32);
        j = minute_start + len;
    } else if colon {
        return None;
    }
    let pm = meridiem(words.get(j));
    if pm.is_some() {
        j += 1;
    }
    let valid = match pm {
        Some(_) => (1..=12).contains(&hour),
        None => (0..24).contains(&hour),
    };
    valid.then_some((
        Expr::At {
            hour: hour as u32,
            minute,
            pm,
        },
        j - i,
    ))
}

fn parse_expr(words: &[&str], i: usize) -> Option<(Expr, usize)> {
    let first = *words.get(i)?;
    match first {
        "tonight" => return Some((Expr::Tonight, 1)),
        "in" => {
            let (n, len) = count_at(words, i + 1)?;
            let unit = rel_unit(words.get(i + 1 + len)?)?;
            return Some((Expr::In(n, unit), len + 2));
        }
        "at" => return at_time(words, i),
        "this" => {
            if let Some(part) = words.get(i + 1).and_then(|w| Daypart::parse(w)) {
                return Some((Expr::ThisPart(part), 2));
            }
        }
        "next" => {
            let period = match words.get(i + 1) {
                Some(&"week") => Some(Period::Week),
                Some(&"month") => Some(Period::Month),
                Some(&"year") => Some(Period::Year),
                _ => None,
            };
            if let Some(p) = period {
                return Some((Expr::Next(p), 2));
            }
        }
        _ => {}
    }
    let (day, len) = day_expr_at(words, i)?;
    match words.get(i + len).and_then(|w| Daypart::parse(w)) {
        Some(part) => Some((Expr::Day(day, Some(part)), len + 1)),
        None => Some((Expr::Day(day, None), len)),
    }
}

fn at_midnight(date: NaiveDate, offset: &FixedOffset) -> Option<DateTime<FixedOffset>> {
    at_hour(date, 0, 0, offset)
}

fn at_hour(
    date: NaiveDate,
    hour: u32,
    minute: u32,
    offset: &FixedOffset,
) -> Option<DateTime<FixedOffset>> {
    let naive = date.and_time(NaiveTime::from_hms_opt(hour, minute, 0)?);
    offset.from_local_datetime(&naive).single()
}

fn resolve_day(day: DayExpr, reference: &DateTime<FixedOffset>) -> Option<NaiveDate> {
    let today = reference.date_naive();
    Some(match day {
        DayExpr::Today => today,
        DayExpr::Tomorrow => today.succ_opt()?,
        DayExpr::Yesterday => today.pred_opt()?,
        DayExpr::ThisWeekday(wd) => {
            let ahead = (7 + wd.num_days_from_monday() as i64
                - today.weekday().num_days_from_monday() as i64)
                % 7;
            today + Duration::days(ahead)
        }
        DayExpr::NextWeekday(wd) => {
            let ahead = (7 + wd.num_days_from_monday() as i64
                - today.weekday().num_days_from_monday() as i64)
                % 7;
            today + Duration::days(if ahead == 0 { 7 } else { ahead })
        }
        DayExpr::MonthDay(m, d) => {
            let this_year = NaiveDate::from_ymd_opt(today.year(), m, d);
            match this_year {
                Some(date) if date >= today => date,
                _ => NaiveDate::from_ymd_opt(today.year() + 1, m, d)?,
            }
        }
    })
}

fn format_instant(dt: &DateTime<FixedOffset>) -> String {
    dt.format("%Y-%m-%dT%H:%M:%S%:z").to_string()
}

fn resolve(expr: Expr, reference: &DateTime<FixedOffset>) -> Option<InstantTime> {
    let offset = reference.offset();
    let today = reference.date_naive();
    let (instant, grain, precision) = match expr {
        Expr::Day(day, None) => (
            at_midnight(resolve_day(day, reference)?, offset)?,
            Grain::Day,
            Precision::Exact,
        ),
        Expr::Day(day, Some(part)) => (
            at_hour(resolve_day(day, reference)?, part.hour(), 0, offset)?,
            Grain::Hour,
            Precision::Approximate,
        ),
        Expr::Tonight => (
            at_hour(today, Daypart::Night.hour(), 0, offset)?,
            Grain::Hour,
            Precision::Approximate,
        ),
        Expr::ThisPart(part) => (
            at_hour(today, part.hour(), 0, offset)?,
            Grain::Hour,
            Precision::Approximate,
        ),
        Expr::In(n, unit) => {
            let (instant, grain) = match unit {
                RelUnit::Minute => (*reference + Duration::minutes(n), Grain::Minute),
                RelUnit::Hour => (*reference + Duration::hours(n), Grain::Hour),
                RelUnit::Day => (*reference + Duration::days(n), Grain::Day),
                RelUnit::Week => (*reference + Duration::weeks(n), Grain::Week),
                RelUnit::Month => (
                    reference.checked_add_months(Months::new(u32::try_from(n).ok()?))?,
                    Grain::Month,
                ),
            };
            (instant, grain, Precision::Exact)
        }
        Expr::At { hour, minute, pm } => {
            let hour = match pm {
                Some(true) if hour < 12 => hour + 12,
                Some(false) if hour == 12 => 0,
                _ => hour,
            };
            let grain = if minute.is_some() {
                Grain::Minute
            } else {
                Grain::Hour
            };
            (
                at_hour(today, hour, minute.unwrap_or(0), offset)?,
                grain,
                Precision::Exact,
            )
        }
        Expr::Next(period) => {
            let (date, grain) = match period {
                Period::Week => {
                    let back = today.weekday().num_days_from_monday() as i64;
                    (today - Duration::days(back) + Duration::days(7), Grain::Week)
                }
                Period::Month => {
                    let first = today.with_day(1)?;
                    (first.checked_add_months(Months::new(1))?, Grain::Month)
                }
                Period::Year => (NaiveDate::from_ymd_opt(today.year() + 1, 1, 1)?, Grain::Year),
            };
            (at_midnight(date, offset)?, grain, Precision::Exact)
        }
    };
    Some(InstantTime {
        value: format_instant(&instant),
        grain,
        precision,
    })
}

/// Longest datetime expression at `i` that also resolves.
pub(crate) fn datetime_at(
    words: &[&str],
    i: usize,
    reference: &DateTime<FixedOffset>,
) -> Option<(InstantTime, usize)> {
    let (expr, len) = parse_expr(words, i)?;
    if let Some(value) = resolve(expr, reference) {
        return Some((value, len));
    }
    // a trailing daypart may be what made resolution fail; retry without it
    if let Expr::Day(day, Some(_)) = expr {
        let value = resolve(Expr::Day(day, None), reference)?;
        return Some((value, len - 1));
    }
    None
}

/// Resolve a phrase that must be matched entirely by the datetime grammar.
pub fn resolve_datetime(words: &[&str], reference: &DateTime<FixedOffset>) -> Result<InstantTime> {
    let phrase = words.join(" ");
    match datetime_at(words, 0, reference) {
        Some((value, len)) if len == words.len() => Ok(value),
        _ => Err(Error::NoParse(format!(
            "'{phrase}' is not covered by the datetime grammar"
        ))),
    }
}

fn duration_unit(word: &str) -> Option<usize> {
    // index into [years, months, days, hours, minutes, seconds]; weeks -> days
    Some(match word {
        "year" | "years" => 0,
        "month" | "months" => 1,
        "week" | "weeks" | "day" | "days" => 2,
        "hour" | "hours" => 3,
        "minute" | "minutes" => 4,
        "second" | "seconds" => 5,
        _ => return None,
    })
}

fn duration_part(words: &[&str], i: usize) -> Option<(usize, i64, usize)> {
    let (n, len) = count_at(words, i)?;
    let unit_word = *words.get(i + len)?;
    let slot = duration_unit(unit_word)?;
    let amount = if unit_word.starts_with("week") { n * 7 } else { n };
    Some((slot, amount, len + 1))
}

pub(crate) fn duration_at(words: &[&str], i: usize) -> Option<(DurationValue, usize)> {
    let (slot, amount, mut len) = duration_part(words, i)?;
    let mut fields = [0i64; 6];
    fields[slot] += amount;
    loop {
        let mut j = i + len;
        if words.get(j) == Some(&"and") {
            j += 1;
        }
        match duration_part(words, j) {
            Some((slot, amount, part_len)) => {
                fields[slot] += amount;
                len = j + part_len - i;
            }
            None => break,
        }
    }
    let [years, months, days, hours, minutes, seconds] = fields;
    Some((
        DurationValue {
            years,
            months,
            days,
            hours,
            minutes,
            seconds,
        },
        len,
    ))
}
