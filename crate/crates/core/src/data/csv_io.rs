use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, Dataset, ObservationTriplet, TimeSeriesSample, Vocabulary};

/// Standard file names inside a data directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DataFiles {
    pub triplets: PathBuf,
    pub demographics: PathBuf,
    pub labels: PathBuf,
    pub vocabulary: PathBuf,
    /// Optional `stay_id,patient_id` map; without it every stay is its own patient.
    pub patients: PathBuf,
}

impl DataFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            triplets: dir.join("triplets.csv"),
            demographics: dir.join("demographics.csv"),
            labels: dir.join("labels.csv"),
            vocabulary: dir.join("vocab.txt"),
            patients: dir.join("patients.csv"),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        vec![
            &self.triplets,
            &self.demographics,
            &self.labels,
            &self.vocabulary,
            &self.patients,
        ]
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// One variable name per line; line order defines the index.
pub fn read_vocabulary(path: &Path) -> Result<Vocabulary, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let names = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    Vocabulary::new(names)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn check_header(
    rdr: &mut csv::Reader<fs::File>,
    path: &Path,
    expected: &[&str],
) -> Result<Vec<String>, DataError> {
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(malformed(
            path,
            1,
            format!("expected header starting with `{}`", expected.join(",")),
        ));
    }
    Ok(header)
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64, DataError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| malformed(path, line, format!("{what} `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(malformed(
            path,
            line,
            format!("{what} `{field}` is not finite"),
        ));
    }
    Ok(v)
}

/// Reads the triplet, demographics, and labels CSVs into one sample per stay.
///
/// Stays are ordered as in the demographics file; triplets are sorted by
/// time, ties by variable index. Stays without a labels row are unlabeled.
pub fn ingest_csv(
    triplets_path: &Path,
    demographics_path: &Path,
    labels_path: &Path,
    vocab: &Vocabulary,
) -> Result<Dataset, DataError> {
    // demographics
    let mut rdr = reader(demographics_path)?;
    let header = check_header(&mut rdr, demographics_path, &["stay_id"])?;
    let demographic_names = header[1..].to_vec();
    let mut order = Vec::new();
    let mut samples: HashMap<String, TimeSeriesSample> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(demographics_path))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(malformed(
                demographics_path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let stay_id = rec[0].trim().to_string();
        let demographics = (1..rec.len())
            .map(|i| parse_f64(demographics_path, line, &rec[i], "demographic"))
            .collect::<Result<Vec<_>, _>>()?;
        if samples.contains_key(&stay_id) {
            return Err(malformed(
                demographics_path,
                line,
                format!("duplicate stay `{stay_id}`"),
            ));
        }
        order.push(stay_id.clone());
        samples.insert(
            stay_id.clone(),
            TimeSeriesSample {
                patient_id: stay_id.clone(),
                stay_id,
                triplets: Vec::new(),
                demographics,
                label: None,
            },
        );
    }

    // triplets
    let mut rdr = reader(triplets_path)?;
    check_header(
        &mut rdr,
        triplets_path,
        &["stay_id", "time", "variable", "value"],
    )?;
    let mut seen: HashSet<(String, u64, usize)> = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(triplets_path))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(malformed(
                triplets_path,
                line,
                format!("expected 4 fields, found {}", rec.len()),
            ));
        }
        let stay_id = rec[0].trim();
        let time = parse_f64(triplets_path, line, &rec[1], "time")?;
        if time < 0.0 {
            return Err(DataError::NegativeTime {
                path: triplets_path.to_path_buf(),
                line,
                time,
            });
        }
        let name = rec[2].trim();
        let variable = vocab
            .lookup(name)
            .ok_or_else(|| DataError::UnknownVariable {
                path: triplets_path.to_path_buf(),
                line,
                name: name.to_string(),
            })?;
        let value = parse_f64(triplets_path, line, &rec[3], "value")?;
        if !seen.insert((stay_id.to_string(), time.to_bits(), variable)) {
            return Err(DataError::DuplicateObservation {
                path: triplets_path.to_path_buf(),
                line,
                stay_id: stay_id.to_string(),
                time,
                variable: name.to_string(),
            });
        }
        let sample = samples
            .get_mut(stay_id)
            .ok_or_else(|| DataError::MissingDemographics(stay_id.to_string()))?;
        sample
            .triplets
            .push(ObservationTriplet::new(time, variable, value));
    }

    // labels
    let mut rdr = reader(labels_path)?;
    check_header(&mut rdr, labels_path, &["stay_id", "label"])?;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(labels_path))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(malformed(
                labels_path,
                line,
                format!("expected 2 fields, found {}", rec.len()),
            ));
        }
        let label = match rec[1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(malformed(
                    labels_path,
                    line,
                    format!("label `{other}` is not 0 or 1"),
                ))
            }
        };
        let stay_id = rec[0].trim();
        let sample = samples
            .get_mut(stay_id)
            .ok_or_else(|| malformed(labels_path, line, format!("unknown stay `{stay_id}`")))?;
        if sample.label.replace(label).is_some() {
            return Err(malformed(
                labels_path,
                line,
                format!("duplicate label for `{stay_id}`"),
            ));
        }
    }

    let samples = order
        .into_iter()
        .map(|id| {
            let mut s = samples.remove(&id).expect("stay registered");
            s.sort_triplets();
            s
        })
        .collect();
    Ok(Dataset {
        vocabulary: vocab.clone(),
        demographic_names,
        samples,
    })
}

fn read_patients(path: &Path, dataset: &mut Dataset) -> Result<(), DataError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &["stay_id", "patient_id"])?;
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(malformed(
                path,
                line,
                format!("expected 2 fields, found {}", rec.len()),
            ));
        }
        map.insert(rec[0].trim().to_string(), rec[1].trim().to_string());
    }
    for s in &mut dataset.samples {
        if let Some(p) = map.get(&s.stay_id) {
            s.patient_id = p.clone();
        }
    }
    Ok(())
}

/// Loads `vocab.txt`, the three CSVs, and `patients.csv` when present.
pub fn load_data_dir(dir: &Path) -> Result<Dataset, DataError> {
    let files = DataFiles::in_dir(dir);
    let vocab = read_vocabulary(&files.vocabulary)?;
    let mut dataset = ingest_csv(&files.triplets, &files.demographics, &files.labels, &vocab)?;
    if files.patients.exists() {
        read_patients(&files.patients, &mut dataset)?;
    }
    Ok(dataset)
}

/// Writes the dataset in the ingestion format. Output is byte-deterministic.
pub fn export_csv(dataset: &Dataset, dir: &Path) -> Result<DataFiles, DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = DataFiles::in_dir(dir);

    let mut vocab = String::new();
    for name in dataset.vocabulary.names() {
        vocab.push_str(name);
        vocab.push('\n');
    }
    fs::write(&files.vocabulary, vocab).map_err(io_err(&files.vocabulary))?;

    let write = |path: &Path, body: &str| fs::write(path, body).map_err(io_err(path));

    let mut t = String::from("stay_id,time,variable,value\n");
    let mut d = String::from("stay_id");
    for name in &dataset.demographic_names {
        d.push(',');
        d.push_str(name);
    }
    d.push('\n');
    let mut l = String::from("stay_id,label\n");
    let mut p = String::from("stay_id,patient_id\n");
    for s in &dataset.samples {
        for o in &s.triplets {
            t.push_str(&format!(
                "{},{},{},{}\n",
                s.stay_id,
                o.time,
                dataset.vocabulary.name(o.variable),
                o.value
            ));
        }
        d.push_str(&s.stay_id);
        for v in &s.demographics {
            d.push_str(&format!(",{v}"));
        }
        d.push('\n');
        if let Some(label) = s.label {
            l.push_str(&format!("{},{}\n", s.stay_id, label));
        }
        p.push_str(&format!("{},{}\n", s.stay_id, s.patient_id));
    }
    write(&files.triplets, &t)?;
    write(&files.demographics, &d)?;
    write(&files.labels, &l)?;
    write(&files.patients, &p)?;
    Ok(files)
}
