use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

use super::InteractionMatrix;

/// Users with fewer distinct clicked news items are dropped from MIND.
pub const MIND_MIN_CLICKS: usize = 5;

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Ok(BufReader::new(f))
}

fn for_each_line(path: &Path, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        f(idx + 1, line)?;
    }
    Ok(())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// MovieLens-1M `ratings.dat`: `UserID::MovieID::Rating::Timestamp`.
///
/// Every rated pair becomes an interaction; rating values and timestamps are
/// dropped.
pub fn load_movielens(path: &Path) -> Result<InteractionMatrix> {
    let mut pairs = Vec::new();
    for_each_line(path, |n, line| {
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            return Err(parse_err(path, n, format!("expected 4 '::'-separated fields, found {}", fields.len())));
        }
        let user: u64 = fields[0].trim().parse().map_err(|_| parse_err(path, n, "bad user id"))?;
        let movie: u64 = fields[1].trim().parse().map_err(|_| parse_err(path, n, "bad movie id"))?;
        fields[2].trim().parse::<f64>().map_err(|_| parse_err(path, n, "bad rating"))?;
        fields[3].trim().parse::<i64>().map_err(|_| parse_err(path, n, "bad timestamp"))?;
        pairs.push((user.to_string(), movie.to_string()));
        Ok(())
    })?;
    Ok(InteractionMatrix::from_labeled_pairs(pairs))
}

/// HetRec Last.fm `user_artists.dat`: `userID<TAB>artistID<TAB>weight`.
///
/// A leading header line is skipped. Positive listening counts become an
/// interaction; zero counts are treated as absent.
pub fn load_lastfm(path: &Path) -> Result<InteractionMatrix> {
    let mut pairs = Vec::new();
    for_each_line(path, |n, line| {
        let fields: Vec<&str> = line.split('\t').collect();
        if n == 1 && fields.first().is_some_and(|f| f.trim().parse::<u64>().is_err()) {
            return Ok(());
        }
        if fields.len() != 3 {
            return Err(parse_err(path, n, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let user: u64 = fields[0].trim().parse().map_err(|_| parse_err(path, n, "bad user id"))?;
        let artist: u64 = fields[1].trim().parse().map_err(|_| parse_err(path, n, "bad artist id"))?;
        let weight: f64 = fields[2].trim().parse().map_err(|_| parse_err(path, n, "bad weight"))?;
        if !(weight >= 0.0) {
            return Err(parse_err(path, n, "negative weight"));
        }
        if weight > 0.0 {
            pairs.push((user.to_string(), artist.to_string()));
        }
        Ok(())
    })?;
    Ok(InteractionMatrix::from_labeled_pairs(pairs))
}

/// MIND-small `behaviors.tsv`:
/// `ImpressionID<TAB>UserID<TAB>Time<TAB>History<TAB>Impressions`.
///
/// Impression entries look like `N1234-1` (clicked) or `N1234-0`. Clicked
/// entries become interactions; non-clicked ones stay unobserved. Users with
/// fewer than [`MIND_MIN_CLICKS`] distinct clicked items are removed.
pub fn load_mind(path: &Path) -> Result<InteractionMatrix> {
    let mut clicks: HashMap<String, BTreeSet<String>> = HashMap::new();
    let mut user_order: Vec<String> = Vec::new();
    for_each_line(path, |n, line| {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(path, n, format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let user = fields[1].trim();
        if user.is_empty() {
            return Err(parse_err(path, n, "empty user id"));
        }
        for token in fields[4].split_whitespace() {
            let (news, flag) = token
                .rsplit_once('-')
                .ok_or_else(|| parse_err(path, n, format!("impression entry '{token}' lacks a click flag")))?;
            if news.is_empty() {
                return Err(parse_err(path, n, format!("impression entry '{token}' lacks a news id")));
            }
            match flag {
                "1" => {
                    if !clicks.contains_key(user) {
                        user_order.push(user.to_owned());
                    }
                    clicks.entry(user.to_owned()).or_default().insert(news.to_owned());
                }
                "0" => {}
                _ => return Err(parse_err(path, n, format!("click flag '{flag}' is not 0 or 1"))),
            }
        }
        Ok(())
    })?;
    let pairs = user_order.iter().flat_map(|u| {
        let set = &clicks[u];
        let keep = set.len() >= MIND_MIN_CLICKS;
        set.iter().filter(move |_| keep).map(move |news| (u.as_str(), news.as_str()))
    });
    Ok(InteractionMatrix::from_labeled_pairs(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn movielens_pairs_and_duplicates() {
        let f = file("1::1193::5::978300760\n1::661::3::978302109\n2::1193::4::978300000\n1::1193::2::978300761\n");
        let m = load_movielens(f.path()).unwrap();
        assert_eq!(m.n_users(), 2);
        assert_eq!(m.n_items(), 2);
        assert_eq!(m.interaction_count(), 3);
        let u = m.user_labels().iter().position(|l| l == "1").unwrap();
        let i = m.item_labels().iter().position(|l| l == "1193").unwrap() as u32;
        assert!(m.contains(u, i));
    }

    #[test]
    fn movielens_reports_line_number() {
        let f = file("1::1193::5::978300760\n\n1::oops::5::1\n");
        match load_movielens(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn lastfm_binarizes_weights() {
        let f = file("userID\tartistID\tweight\n2\t51\t13883\n2\t52\t1\n3\t51\t0\n");
        let m = load_lastfm(f.path()).unwrap();
        assert_eq!(m.n_users(), 1);
        assert_eq!(m.interaction_count(), 2);
        let bad = file("2\t51\n");
        assert!(matches!(load_lastfm(bad.path()), Err(Error::Parse { line: 1, .. })));
    }

    fn mind_line(id: usize, user: &str, clicked: &[&str]) -> String {
        let imp: Vec<String> = clicked
            .iter()
            .map(|n| format!("{n}-1"))
            .chain(std::iter::once("N999-0".to_string()))
            .collect();
        format!("{id}\t{user}\t11/11/2019 9:05:58 AM\tN1 N2\t{}\n", imp.join(" "))
    }

    #[test]
    fn mind_click_threshold() {
        let mut s = String::new();
        s += &mind_line(1, "U4", &["N1", "N2", "N3"]);
        s += &mind_line(2, "U4", &["N4", "N1"]);
        s += &mind_line(3, "U5", &["N1", "N2", "N3", "N4", "N5"]);
        let m = load_mind(file(&s).path()).unwrap();
        assert_eq!(m.user_labels(), &["U5".to_string()]);
        assert_eq!(m.interaction_count(), 5);
        // non-clicked N999 never becomes an item
        assert!(!m.item_labels().iter().any(|l| l == "N999"));
    }

    #[test]
    fn mind_rejects_bad_flags() {
        let f = file("1\tU1\tt\t\tN1234-2\n");
        assert!(matches!(load_mind(f.path()), Err(Error::Parse { line: 1, .. })));
        let f = file("1\tU1\tt\t\tN1234\n");
        assert!(load_mind(f.path()).is_err());
    }

    #[test]
    fn mind_impression_token_format() {
        let s = mind_line(1, "U1", &["N1234", "N2", "N3", "N4", "N5"]);
        let m = load_mind(file(&s).path()).unwrap();
        assert!(m.item_labels().iter().any(|l| l == "N1234"));
    }
}
