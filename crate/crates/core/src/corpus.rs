//! Documents, placement history, labeled pairs and the synthetic bilingual
//! corpus.
//!
//! Positives come only from placements; negatives are sampled uniformly from
//! the remaining CV x vacancy grid. The synthetic generator writes CVs in a
//! first-person "storytelling" register and vacancies in a "we are looking
//! for" register, drawing each occupation term from a per-language synonym
//! set, so that matched pairs often share no content word at all.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_NEG_RATIO: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("placement references unknown document {0:?}")]
    DanglingReference(String),
    #[error("document {id:?} is not a {expected}")]
    KindMismatch { id: String, expected: DocumentKind },
    #[error("requested {requested} negatives but only {available} unlabeled pairs exist")]
    InsufficientNegatives { requested: usize, available: usize },
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error("split fractions must be positive and sum to 1")]
    InvalidFractions,
    #[error("{groups} vacancy groups cannot fill {splits} splits")]
    TooFewGroups { groups: usize, splits: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentKind {
    Cv,
    Vacancy,
}

impl core::fmt::Display for DocumentKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            DocumentKind::Cv => "cv",
            DocumentKind::Vacancy => "vacancy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub kind: DocumentKind,
    pub language: String,
    pub text: String,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
}

impl Document {
    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub candidate_id: String,
    pub vacancy_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledPair {
    pub cv_id: String,
    pub vacancy_id: String,
    pub y: u8,
}

/// Builds the labeled dataset: deduplicated placements as positives (ordered
/// by timestamp, then ids), followed by `neg_ratio` uniformly sampled
/// negatives per positive.
pub fn generate_pairs(
    placements: &[PlacementRecord],
    documents: &[Document],
    neg_ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>, CorpusError> {
    let by_id: BTreeMap<&str, &Document> = documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let check = |id: &str, expected: DocumentKind| -> Result<(), CorpusError> {
        match by_id.get(id) {
            None => Err(CorpusError::DanglingReference(id.to_string())),
            Some(d) if d.kind != expected => Err(CorpusError::KindMismatch { id: id.to_string(), expected }),
            Some(_) => Ok(()),
        }
    };
    for p in placements {
        check(&p.candidate_id, DocumentKind::Cv)?;
        check(&p.vacancy_id, DocumentKind::Vacancy)?;
    }

    let mut ordered: Vec<&PlacementRecord> = placements.iter().collect();
    ordered.sort_by(|a, b| {
        (a.timestamp, &a.candidate_id, &a.vacancy_id).cmp(&(b.timestamp, &b.candidate_id, &b.vacancy_id))
    });
    let mut positive_set: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut pairs = Vec::new();
    for p in ordered {
        if positive_set.insert((&p.candidate_id, &p.vacancy_id)) {
            pairs.push(LabeledPair { cv_id: p.candidate_id.clone(), vacancy_id: p.vacancy_id.clone(), y: 1 });
        }
    }

    let cvs: Vec<&str> = documents.iter().filter(|d| d.kind == DocumentKind::Cv).map(|d| d.id.as_str()).collect();
    let vacancies: Vec<&str> =
        documents.iter().filter(|d| d.kind == DocumentKind::Vacancy).map(|d| d.id.as_str()).collect();
    let requested = neg_ratio * positive_set.len();
    let grid = cvs.len() * vacancies.len();
    let available = grid - positive_set.len();
    if requested > available {
        return Err(CorpusError::InsufficientNegatives { requested, available });
    }
    if requested == 0 {
        return Ok(pairs);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = |i: usize| (cvs[i / vacancies.len()], vacancies[i % vacancies.len()]);
    if requested * 2 <= available {
        let mut chosen = BTreeSet::new();
        while chosen.len() < requested {
            let i = rng.gen_range(0..grid);
            let (cv, vac) = cell(i);
            if !positive_set.contains(&(cv, vac)) && chosen.insert(i) {
                pairs.push(LabeledPair { cv_id: cv.to_string(), vacancy_id: vac.to_string(), y: 0 });
            }
        }
    } else {
        let pool: Vec<usize> = (0..grid).filter(|&i| !positive_set.contains(&cell(i))).collect();
        for j in index::sample(&mut rng, pool.len(), requested) {
            let (cv, vac) = cell(pool[j]);
            pairs.push(LabeledPair { cv_id: cv.to_string(), vacancy_id: vac.to_string(), y: 0 });
        }
    }
    Ok(pairs)
}

/// Split fractions for train, dev and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, dev: 0.1, test: 0.1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledPair>,
    pub dev: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

/// Splits by vacancy so that every pair of a vacancy lands in one split.
///
/// Groups are shuffled with `seed`; each group then goes to the split whose
/// pair count is furthest below its target (ties to the earlier split).
/// Within a split, pairs keep their input order.
pub fn split_dataset(pairs: &[LabeledPair], fractions: SplitFractions, seed: u64) -> Result<DatasetSplit, CorpusError> {
    let f = [fractions.train, fractions.dev, fractions.test];
    if f.iter().any(|&x| !(x > 0.0)) || libm::fabs(f.iter().sum::<f64>() - 1.0) > 1e-9 {
        return Err(CorpusError::InvalidFractions);
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for p in pairs {
        let n = sizes.entry(&p.vacancy_id).or_insert_with(|| {
            order.push(&p.vacancy_id);
            0
        });
        *n += 1;
    }
    if order.len() < f.len() {
        return Err(CorpusError::TooFewGroups { groups: order.len(), splits: f.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let total = pairs.len() as f64;
    let mut filled = [0usize; 3];
    let mut assignment: BTreeMap<&str, usize> = BTreeMap::new();
    for group in order {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (s, &frac) in f.iter().enumerate() {
            let deficit = frac * total - filled[s] as f64;
            if deficit > best_deficit {
                best = s;
                best_deficit = deficit;
            }
        }
        filled[best] += sizes[group];
        assignment.insert(group, best);
    }

    let mut out = DatasetSplit::default();
    for p in pairs {
        match assignment[p.vacancy_id.as_str()] {
            0 => out.train.push(p.clone()),
            1 => out.dev.push(p.clone()),
            _ => out.test.push(p.clone()),
        }
    }
    Ok(out)
}

/// Surface forms of one occupation concept, per language. Forms at the same
/// position in two languages are translations of each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationForms {
    pub occupation: String,
    pub forms: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_occupations: usize,
    pub n_cvs: usize,
    pub n_vacancies: usize,
    pub cv_language_mix: BTreeMap<String, f64>,
    pub vacancy_language_mix: BTreeMap<String, f64>,
    pub synonym_sets: Vec<OccupationForms>,
    pub bilingual_lexicon: Vec<(String, String)>,
    /// Inclusive range of placements drawn per vacancy.
    pub placements_per_vacancy: (usize, usize),
    pub locations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub documents: Vec<Document>,
    pub placements: Vec<PlacementRecord>,
    pub bilingual_lexicon: Vec<(String, String)>,
}

// (occupation, english forms, dutch forms); forms are index-aligned translations.
const OCCUPATIONS: &[(&str, &[&str], &[&str])] = &[
    ("education", &["instructor", "tutor", "teacher"], &["instructeur", "bijlesdocent", "leraar"]),
    ("logistics", &["logistics", "dispatcher", "courier"], &["logistiek", "expediteur", "koerier"]),
    ("nursing", &["nurse", "caregiver"], &["verpleegkundige", "verzorgende"]),
    ("cooking", &["cook", "chef", "baker"], &["kok", "chefkok", "bakker"]),
    ("software", &["programmer", "developer", "engineer"], &["programmeur", "ontwikkelaar", "ingenieur"]),
    ("accounting", &["accountant", "bookkeeper"], &["boekhouder", "administrateur"]),
    ("sales", &["salesperson", "representative", "merchant"], &["verkoper", "vertegenwoordiger", "handelaar"]),
    ("cleaning", &["cleaner", "janitor"], &["schoonmaker", "conciërge"]),
    ("driving", &["driver", "trucker"], &["chauffeur", "vrachtwagenchauffeur"]),
    ("security", &["guard", "watchman"], &["bewaker", "beveiliger"]),
    ("construction", &["builder", "bricklayer", "carpenter"], &["bouwvakker", "metselaar", "timmerman"]),
    ("electrical", &["electrician", "technician"], &["elektricien", "monteur"]),
    ("hospitality", &["waiter", "bartender", "host"], &["ober", "barman", "gastheer"]),
    ("retail", &["cashier", "shopkeeper"], &["caissière", "winkelier"]),
    ("healthcare", &["doctor", "physician"], &["arts", "dokter"]),
    ("administration", &["secretary", "receptionist", "clerk"], &["secretaresse", "receptioniste", "klerk"]),
    ("marketing", &["marketer", "advertiser"], &["marketeer", "adverteerder"]),
    ("manufacturing", &["machinist", "welder", "assembler"], &["machinebediener", "lasser", "assembleur"]),
    ("agriculture", &["farmer", "gardener", "grower"], &["boer", "tuinier", "kweker"]),
    ("design", &["designer", "illustrator"], &["ontwerper", "tekenaar"]),
];

const CV_TEMPLATES: &[(&str, &[&str])] = &[
    (
        "en",
        &[
            "i have {n} years of experience as a {occ}",
            "i worked as a {occ} for {n} years",
            "for {n} years i have been working as a {occ}",
        ],
    ),
    ("nl", &["ik heb {n} jaar ervaring als {occ}", "ik werk al {n} jaar als {occ}", "ik heb {n} jaar gewerkt als {occ}"]),
];

const VACANCY_TEMPLATES: &[(&str, &[&str])] = &[
    (
        "en",
        &[
            "we are looking for a talented {occ}",
            "our team is seeking an experienced {occ}",
            "we want to hire a motivated {occ} to join us",
        ],
    ),
    ("nl", &["wij zoeken een getalenteerde {occ}", "ons team zoekt een ervaren {occ}", "wij willen een gemotiveerde {occ} aannemen"]),
];

const LOCATIONS: &[&str] = &["amsterdam", "rotterdam", "utrecht", "eindhoven", "groningen", "den haag"];

const EPOCH_2020: i64 = 1_577_836_800;
const THREE_YEARS: i64 = 3 * 365 * 24 * 3600;

fn templates(table: &'static [(&'static str, &'static [&'static str])], lang: &str) -> Option<&'static [&'static str]> {
    table.iter().find(|(l, _)| *l == lang).map(|(_, t)| *t)
}

impl Default for SynthSpec {
    /// 20 occupations, 1000 CVs (90% Dutch, 10% English), 200 vacancies
    /// (half Dutch, half English) with 2 to 6 placements each.
    fn default() -> Self {
        let synonym_sets: Vec<OccupationForms> = OCCUPATIONS
            .iter()
            .map(|(occ, en, nl)| OccupationForms {
                occupation: occ.to_string(),
                forms: [
                    ("en".to_string(), en.iter().map(|s| s.to_string()).collect()),
                    ("nl".to_string(), nl.iter().map(|s| s.to_string()).collect()),
                ]
                .into_iter()
                .collect(),
            })
            .collect();
        let bilingual_lexicon = OCCUPATIONS
            .iter()
            .flat_map(|(_, en, nl)| en.iter().zip(nl.iter()).map(|(e, n)| (e.to_string(), n.to_string())))
            .collect();
        Self {
            n_occupations: OCCUPATIONS.len(),
            n_cvs: 1000,
            n_vacancies: 200,
            cv_language_mix: [("nl".to_string(), 0.9), ("en".to_string(), 0.1)].into_iter().collect(),
            vacancy_language_mix: [("nl".to_string(), 0.5), ("en".to_string(), 0.5)].into_iter().collect(),
            synonym_sets,
            bilingual_lexicon,
            placements_per_vacancy: (2, 6),
            locations: LOCATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::InvalidSpec(msg));
        if self.n_occupations == 0 || self.n_occupations > self.synonym_sets.len() {
            return bad(format!("n_occupations must be in 1..={}", self.synonym_sets.len()));
        }
        if self.n_cvs == 0 || self.n_vacancies == 0 {
            return bad("n_cvs and n_vacancies must be positive".into());
        }
        let (lo, hi) = self.placements_per_vacancy;
        if lo == 0 || lo > hi {
            return bad("placements_per_vacancy must satisfy 1 <= min <= max".into());
        }
        if self.locations.is_empty() {
            return bad("at least one location is required".into());
        }
        for (name, mix, table) in [
            ("cv_language_mix", &self.cv_language_mix, CV_TEMPLATES),
            ("vacancy_language_mix", &self.vacancy_language_mix, VACANCY_TEMPLATES),
        ] {
            if mix.is_empty() || mix.values().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return bad(format!("{name} must hold non-negative fractions"));
            }
            if libm::fabs(mix.values().sum::<f64>() - 1.0) > 1e-9 {
                return bad(format!("{name} fractions must sum to 1"));
            }
            for lang in mix.keys() {
                if templates(table, lang).is_none() {
                    return bad(format!("no templates for language {lang:?}"));
                }
                for occ in &self.synonym_sets[..self.n_occupations] {
                    if occ.forms.get(lang).is_none_or(Vec::is_empty) {
                        return bad(format!("occupation {:?} has no {lang} surface form", occ.occupation));
                    }
                }
            }
        }
        Ok(())
    }
}

fn sample_language<'a>(mix: &'a BTreeMap<String, f64>, rng: &mut ChaCha8Rng) -> &'a str {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = "";
    for (lang, &p) in mix {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = lang;
        if u < acc {
            return lang;
        }
    }
    last
}

fn render(template: &str, years: u32, term: &str) -> String {
    template.replace("{n}", &format!("{years}")).replace("{occ}", term)
}

struct DocDraft<'a> {
    occupation: &'a OccupationForms,
    language: &'a str,
    form_index: usize,
    template_index: usize,
    years: u32,
    location: &'a str,
}

impl DocDraft<'_> {
    fn build(&self, id: String, kind: DocumentKind) -> Document {
        let table = if kind == DocumentKind::Cv { CV_TEMPLATES } else { VACANCY_TEMPLATES };
        let temps = templates(table, self.language).expect("validated language");
        let forms = &self.occupation.forms[self.language];
        let term = &forms[self.form_index % forms.len()];
        let mut fields = BTreeMap::new();
        fields.insert("location".to_string(), self.location.to_string());
        fields.insert("occupation".to_string(), self.occupation.occupation.clone());
        fields.insert("surface_form".to_string(), term.clone());
        Document {
            id,
            kind,
            language: self.language.to_string(),
            text: render(temps[self.template_index % temps.len()], self.years, term),
            fields,
        }
    }
}

fn draft<'a>(spec: &'a SynthSpec, occ: &'a OccupationForms, language: &'a str, rng: &mut ChaCha8Rng) -> DocDraft<'a> {
    DocDraft {
        occupation: occ,
        language,
        form_index: rng.gen_range(0..occ.forms[language].len()),
        template_index: rng.gen_range(0..3),
        years: rng.gen_range(1..=20),
        location: &spec.locations[rng.gen_range(0..spec.locations.len())],
    }
}

/// Generates CVs, vacancies and placements. Every vacancy is placed with at
/// least one CV of the same occupation, in whatever language that CV was
/// written.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occupations = &spec.synonym_sets[..spec.n_occupations];

    let mut cv_occupation: Vec<usize> = (0..spec.n_cvs).map(|i| i % occupations.len()).collect();
    cv_occupation.shuffle(&mut rng);
    let mut cvs_by_occupation: Vec<Vec<usize>> = alloc::vec![Vec::new(); occupations.len()];
    let mut documents = Vec::with_capacity(spec.n_cvs + spec.n_vacancies);
    for (i, &occ) in cv_occupation.iter().enumerate() {
        let language = sample_language(&spec.cv_language_mix, &mut rng);
        let d = draft(spec, &occupations[occ], language, &mut rng);
        documents.push(d.build(format!("cv-{i:05}"), DocumentKind::Cv));
        cvs_by_occupation[occ].push(i);
    }

    let staffed: Vec<usize> = (0..occupations.len()).filter(|&o| !cvs_by_occupation[o].is_empty()).collect();
    let mut placements = Vec::new();
    let (lo, hi) = spec.placements_per_vacancy;
    for j in 0..spec.n_vacancies {
        let occ = staffed[rng.gen_range(0..staffed.len())];
        let language = sample_language(&spec.vacancy_language_mix, &mut rng);
        let d = draft(spec, &occupations[occ], language, &mut rng);
        let vacancy = d.build(format!("vac-{j:04}"), DocumentKind::Vacancy);
        let pool = &cvs_by_occupation[occ];
        let count = rng.gen_range(lo..=hi).min(pool.len());
        for k in index::sample(&mut rng, pool.len(), count) {
            placements.push(PlacementRecord {
                candidate_id: documents[pool[k]].id.clone(),
                vacancy_id: vacancy.id.clone(),
                timestamp: EPOCH_2020 + rng.gen_range(0..THREE_YEARS),
            });
        }
        documents.push(vacancy);
    }
    Ok(SynthCorpus { documents, placements, bilingual_lexicon: spec.bilingual_lexicon.clone() })
}

/// The same candidate profile rendered once in English and once in Dutch:
/// same occupation, translated surface form, same years and template slot.
pub fn synth_translation_pairs(spec: &SynthSpec, n: usize, seed: u64) -> Result<Vec<(Document, Document)>, CorpusError> {
    spec.validate()?;
    let occupations: Vec<&OccupationForms> = spec.synonym_sets[..spec.n_occupations]
        .iter()
        .filter(|o| o.forms.get("en").is_some_and(|f| !f.is_empty()) && o.forms.get("nl").is_some_and(|f| !f.is_empty()))
        .collect();
    if occupations.is_empty() {
        return Err(CorpusError::InvalidSpec("translation pairs need en and nl surface forms".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let occ = occupations[rng.gen_range(0..occupations.len())];
        let mut d = draft(spec, occ, "en", &mut rng);
        let en = d.build(format!("pair-{i:04}-en"), DocumentKind::Cv);
        d.language = "nl";
        let nl = d.build(format!("pair-{i:04}-nl"), DocumentKind::Cv);
        out.push((en, nl));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn doc(id: &str, kind: DocumentKind) -> Document {
        Document { id: id.into(), kind, language: "nl".into(), text: String::new(), fields: BTreeMap::new() }
    }

    fn placement(cv: &str, vac: &str, ts: i64) -> PlacementRecord {
        PlacementRecord { candidate_id: cv.into(), vacancy_id: vac.into(), timestamp: ts }
    }

    fn small_world() -> Vec<Document> {
        let mut docs: Vec<Document> = (0..4).map(|i| doc(&format!("c{i}"), DocumentKind::Cv)).collect();
        docs.extend((0..3).map(|i| doc(&format!("v{i}"), DocumentKind::Vacancy)));
        docs
    }

    #[test]
    fn pair_counts() {
        let docs = small_world();
        let ps = vec![placement("c1", "v0", 20), placement("c0", "v1", 10), placement("c1", "v0", 30)];
        let pairs = generate_pairs(&ps, &docs, 1, 3).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0], LabeledPair { cv_id: "c0".into(), vacancy_id: "v1".into(), y: 1 });
        assert_eq!(pairs[1], LabeledPair { cv_id: "c1".into(), vacancy_id: "v0".into(), y: 1 });
        assert!(pairs[2..].iter().all(|p| p.y == 0));
        assert_eq!(generate_pairs(&ps, &docs, 0, 3).unwrap().len(), 2);
    }

    #[test]
    fn negatives_are_unlabeled_and_unique() {
        let docs = small_world();
        let ps = vec![placement("c0", "v0", 1), placement("c1", "v1", 2)];
        // 12 cells, 2 positive: asking for all 10 exercises the pool path
        let pairs = generate_pairs(&ps, &docs, 5, 11).unwrap();
        let set: BTreeSet<(&str, &str)> = pairs.iter().map(|p| (p.cv_id.as_str(), p.vacancy_id.as_str())).collect();
        assert_eq!(set.len(), 12);
        assert_eq!(
            generate_pairs(&ps, &docs, 6, 11),
            Err(CorpusError::InsufficientNegatives { requested: 12, available: 10 })
        );
    }

    #[test]
    fn pool_exhaustion_and_dangling() {
        let docs = vec![doc("c", DocumentKind::Cv), doc("v", DocumentKind::Vacancy)];
        assert_eq!(
            generate_pairs(&[placement("c", "v", 0)], &docs, 1, 0),
            Err(CorpusError::InsufficientNegatives { requested: 1, available: 0 })
        );
        assert_eq!(
            generate_pairs(&[placement("c", "nope", 0)], &docs, 1, 0),
            Err(CorpusError::DanglingReference("nope".into()))
        );
        assert!(matches!(generate_pairs(&[placement("v", "v", 0)], &docs, 0, 0), Err(CorpusError::KindMismatch { .. })));
    }

    fn grouped_pairs(n_vac: usize, per: usize) -> Vec<LabeledPair> {
        (0..n_vac)
            .flat_map(|v| {
                (0..per).map(move |c| LabeledPair { cv_id: format!("c{c}"), vacancy_id: format!("v{v}"), y: (c == 0) as u8 })
            })
            .collect()
    }

    #[test]
    fn split_sizes_follow_greedy_fill() {
        // Greedy fill with targets 80/10/10: the first eight groups go to
        // train, then dev, then test, independent of the shuffled order.
        let pairs = grouped_pairs(10, 10);
        for seed in [0, 7, 42] {
            let s = split_dataset(&pairs, SplitFractions::default(), seed).unwrap();
            assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (80, 10, 10));
        }
    }

    #[test]
    fn split_keeps_groups_whole() {
        let pairs = grouped_pairs(13, 4);
        let s = split_dataset(&pairs, SplitFractions::default(), 5).unwrap();
        for v in 0..13 {
            let id = format!("v{v}");
            let hits = [&s.train, &s.dev, &s.test].iter().filter(|part| part.iter().any(|p| p.vacancy_id == id)).count();
            assert_eq!(hits, 1);
        }
        assert_eq!(s.train.len() + s.dev.len() + s.test.len(), pairs.len());
    }

    #[test]
    fn split_errors() {
        let pairs = grouped_pairs(1, 5);
        assert_eq!(
            split_dataset(&pairs, SplitFractions::default(), 0),
            Err(CorpusError::TooFewGroups { groups: 1, splits: 3 })
        );
        let bad = SplitFractions { train: 0.5, dev: 0.5, test: 0.1 };
        assert_eq!(split_dataset(&grouped_pairs(5, 2), bad, 0), Err(CorpusError::InvalidFractions));
    }

    #[test]
    fn tiny_synth_places_the_only_pair() {
        let spec = SynthSpec { n_occupations: 1, n_cvs: 1, n_vacancies: 1, ..SynthSpec::default() };
        let c = synth_corpus(&spec, 7).unwrap();
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.placements.len(), 1);
        assert_eq!(c.placements[0].candidate_id, c.documents[0].id);
        assert_eq!(c.placements[0].vacancy_id, c.documents[1].id);
    }

    #[test]
    fn default_language_mix() {
        let c = synth_corpus(&SynthSpec::default(), 7).unwrap();
        let en = c.documents.iter().filter(|d| d.kind == DocumentKind::Cv && d.language == "en").count();
        assert!((80..=120).contains(&en), "{en} english cvs");
        assert_eq!(c.bilingual_lexicon.len(), 50);
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec::default();
        assert_eq!(synth_corpus(&spec, 7).unwrap(), synth_corpus(&spec, 7).unwrap());
        assert_ne!(synth_corpus(&spec, 7).unwrap(), synth_corpus(&spec, 8).unwrap());
    }

    #[test]
    fn every_vacancy_has_a_same_occupation_positive() {
        let c = synth_corpus(&SynthSpec::default(), 3).unwrap();
        let by_id: BTreeMap<&str, &Document> = c.documents.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut placed: BTreeSet<&str> = BTreeSet::new();
        let mut cross_language = 0;
        for p in &c.placements {
            let cv = by_id[p.candidate_id.as_str()];
            let vac = by_id[p.vacancy_id.as_str()];
            assert_eq!(cv.field("occupation"), vac.field("occupation"));
            placed.insert(&p.vacancy_id);
            cross_language += (cv.language != vac.language) as usize;
        }
        assert_eq!(placed.len(), 200);
        assert!(cross_language > 0);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SynthSpec::default();
        spec.cv_language_mix.insert("en".into(), 0.2);
        assert!(matches!(synth_corpus(&spec, 0), Err(CorpusError::InvalidSpec(_))));
        let mut spec = SynthSpec::default();
        spec.cv_language_mix = [("fr".to_string(), 1.0)].into_iter().collect();
        assert!(matches!(synth_corpus(&spec, 0), Err(CorpusError::InvalidSpec(_))));
        let spec = SynthSpec { n_occupations: 21, ..SynthSpec::default() };
        assert!(matches!(synth_corpus(&spec, 0), Err(CorpusError::InvalidSpec(_))));
    }

    #[test]
    fn translation_pairs_align() {
        let pairs = synth_translation_pairs(&SynthSpec::default(), 20, 1).unwrap();
        let lexicon = SynthSpec::default().bilingual_lexicon;
        for (en, nl) in &pairs {
            assert_eq!(en.field("occupation"), nl.field("occupation"));
            let term = (en.field("surface_form").unwrap().to_string(), nl.field("surface_form").unwrap().to_string());
            assert!(lexicon.contains(&term), "{term:?}");
        }
    }
}
