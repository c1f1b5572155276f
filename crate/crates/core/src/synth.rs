//! Seeded synthetic-corpus generator: builds a sector framework, companies
//! whose descriptions draw from per-sector keyword pools, and an annotation
//! set. At zero noise the task is solvable at 100% by the keyword-count
//! oracle below, which makes desk-scale training behavior checkable.

use thiserror::Error;

use crate::company::{Company, CompanyId, CompanyStore, Timestamp};
use crate::framework::{SectorId, SectorTree};
use crate::rng::{mix_seed, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub sector_count: usize,
    /// Sectors per parent node; 0 puts every sector directly under the root.
    pub group_size: usize,
    pub keywords_per_sector: usize,
    pub samples_per_sector: usize,
    /// Keywords drawn per company description.
    pub description_keywords: usize,
    pub tags_per_company: usize,
    /// Probability that a keyword slot draws from the global pool instead of
    /// the company's sector pool.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            sector_count: 8,
            group_size: 4,
            keywords_per_sector: 20,
            samples_per_sector: 40,
            description_keywords: 8,
            tags_per_company: 2,
            noise: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.sector_count == 0 {
            return Err(SynthError::InvalidSpec("sector_count must be > 0".to_string()));
        }
        if self.keywords_per_sector == 0 {
            return Err(SynthError::InvalidSpec(
                "keywords_per_sector must be > 0".to_string(),
            ));
        }
        if self.samples_per_sector == 0 {
            return Err(SynthError::InvalidSpec(
                "samples_per_sector must be > 0".to_string(),
            ));
        }
        let needed = self.sector_count * self.keywords_per_sector;
        if needed > KEYWORD_BANK.len() {
            return Err(SynthError::InvalidSpec(format!(
                "need {needed} keywords but the bank holds {}",
                KEYWORD_BANK.len()
            )));
        }
        if self.sector_count > SECTOR_NAMES.len() {
            return Err(SynthError::InvalidSpec(format!(
                "at most {} sectors supported",
                SECTOR_NAMES.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(SynthError::InvalidSpec("noise must be in [0,1]".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub tree: SectorTree,
    pub companies: Vec<Company>,
    /// company -> annotated sector, in generation order.
    pub annotations: Vec<(CompanyId, SectorId)>,
    /// Per-sector keyword pools, in sector order (the oracle's ground truth).
    pub pools: Vec<(SectorId, Vec<&'static str>)>,
}

impl SyntheticCorpus {
    /// Load the corpus into a live store (companies upserted, annotations
    /// applied at `at`).
    pub fn to_store(&self, at: Timestamp) -> CompanyStore {
        let mut store = CompanyStore::new();
        for company in &self.companies {
            store
                .upsert_company(company.clone())
                .expect("generated ids valid");
        }
        for (company, sector) in &self.annotations {
            store
                .annotate(company, sector, &self.tree, at)
                .expect("generated annotations valid");
        }
        store
    }
}

/// Generate the corpus. Deterministic for a given (spec, seed).
pub fn gen_corpus(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus, SynthError> {
    spec.validate()?;
    let mut rng = Rng::new(mix_seed(&[seed, 0x636f7270]));

    // Framework: optional parent layer, then the annotated sectors.
    let mut records: Vec<(String, Option<String>, String)> = Vec::new();
    if spec.group_size > 0 {
        let parents = spec.sector_count.div_ceil(spec.group_size);
        for p in 0..parents {
            let name = PARENT_NAMES
                .get(p)
                .map(|n| n.to_string())
                .unwrap_or_else(|| format!("division {p}"));
            records.push((format!("g{p:02}"), None, name));
        }
    }
    for (s, name) in SECTOR_NAMES.iter().enumerate().take(spec.sector_count) {
        let parent = (spec.group_size > 0).then(|| format!("g{:02}", s / spec.group_size));
        records.push((format!("s{s:02}"), parent, name.to_string()));
    }
    let tree = SectorTree::from_records(
        records
            .iter()
            .map(|(id, parent, name)| (id.as_str(), parent.as_deref(), name.as_str())),
    )
    .expect("generated framework is valid");

    // Disjoint keyword pools by slicing the bank.
    let pools: Vec<(SectorId, Vec<&'static str>)> = (0..spec.sector_count)
        .map(|s| {
            let start = s * spec.keywords_per_sector;
            (
                SectorId(format!("s{s:02}")),
                KEYWORD_BANK[start..start + spec.keywords_per_sector].to_vec(),
            )
        })
        .collect();
    let global_pool: Vec<&'static str> =
        pools.iter().flat_map(|(_, p)| p.iter().copied()).collect();

    let mut companies = Vec::new();
    let mut annotations = Vec::new();
    for (sector_idx, (sector_id, pool)) in pools.iter().enumerate() {
        for sample_idx in 0..spec.samples_per_sector {
            let company_id = format!("c{sector_idx:02}{sample_idx:04}");
            let legal_name = format!(
                "{} {}",
                NAME_FIRST[rng.below(NAME_FIRST.len())],
                NAME_SECOND[rng.below(NAME_SECOND.len())]
            );
            let draw = |rng: &mut Rng| -> &'static str {
                if spec.noise > 0.0 && rng.uniform() < spec.noise {
                    global_pool[rng.below(global_pool.len())]
                } else {
                    pool[rng.below(pool.len())]
                }
            };
            let tags: Vec<String> = (0..spec.tags_per_company)
                .map(|_| draw(&mut rng).to_string())
                .collect();
            let keywords: Vec<&str> = (0..spec.description_keywords)
                .map(|_| draw(&mut rng))
                .collect();
            let description = format!("a platform for {} workflows", keywords.join(" "));
            companies.push(Company::new(
                company_id.as_str(),
                legal_name,
                tags,
                description,
            ));
            annotations.push((CompanyId(company_id), sector_id.clone()));
        }
    }

    Ok(SyntheticCorpus {
        tree,
        companies,
        annotations,
        pools,
    })
}

/// Nearest-centroid keyword counting: classify each company by which
/// sector's pool its tag and description tokens hit most often. Independent
/// of the neural path; scores 1.0 at zero noise by construction.
pub fn keyword_oracle_accuracy(corpus: &SyntheticCorpus) -> f64 {
    if corpus.companies.is_empty() {
        return 0.0;
    }
    let annotated: std::collections::BTreeMap<&CompanyId, &SectorId> =
        corpus.annotations.iter().map(|(c, s)| (c, s)).collect();
    let mut correct = 0usize;
    for company in &corpus.companies {
        let mut tokens: Vec<String> = company.tags.iter().map(|t| t.to_lowercase()).collect();
        tokens.extend(company.description.split_whitespace().map(str::to_lowercase));
        let mut best_idx = 0usize;
        let mut best_score = -1i64;
        for (idx, (_, pool)) in corpus.pools.iter().enumerate() {
            let score = tokens.iter().filter(|t| pool.contains(&t.as_str())).count() as i64;
            if score > best_score {
                best_score = score;
                best_idx = idx;
            }
        }
        let predicted = &corpus.pools[best_idx].0;
        if annotated.get(&company.id) == Some(&predicted) {
            correct += 1;
        }
    }
    correct as f64 / corpus.companies.len() as f64
}

const SECTOR_NAMES: [&str; 40] = [
    "digital payments",
    "clinical diagnostics",
    "freight logistics",
    "renewable energy",
    "retail commerce",
    "game studios",
    "cyber security",
    "industrial robotics",
    "crop science",
    "streaming media",
    "travel booking",
    "legal automation",
    "online education",
    "modular construction",
    "specialty chemicals",
    "property management",
    "talent recruiting",
    "cloud infrastructure",
    "business analytics",
    "electric mobility",
    "pet wellness",
    "marine shipping",
    "craft beverages",
    "sports performance",
    "weather intelligence",
    "digital banking",
    "smart appliances",
    "space systems",
    "waste recycling",
    "elder care",
    "fashion resale",
    "event ticketing",
    "fleet telematics",
    "dental networks",
    "forest products",
    "micro insurance",
    "voice assistants",
    "quantum tooling",
    "water treatment",
    "vertical farming",
];

const PARENT_NAMES: [&str; 12] = [
    "consumer services",
    "enterprise technology",
    "industrial systems",
    "life sciences",
    "financial platforms",
    "mobility networks",
    "built environment",
    "media landscape",
    "resource economy",
    "human services",
    "frontier hardware",
    "applied intelligence",
];

const NAME_FIRST: [&str; 24] = [
    "Northwind", "Bluegrass", "Ironclad", "Sunrise", "Cobalt", "Meridian", "Harbor", "Pinnacle",
    "Quartz", "Vantage", "Cascade", "Orchid", "Falcon", "Granite", "Lumen", "Marble", "Nimbus",
    "Onyx", "Prairie", "Redwood", "Sable", "Tundra", "Umber", "Willow",
];

const NAME_SECOND: [&str; 24] = [
    "Labs", "Systems", "Group", "Holdings", "Works", "Partners", "Dynamics", "Ventures",
    "Industries", "Solutions", "Collective", "Union", "Forge", "Foundry", "Guild", "Syndicate",
    "Crafters", "Bureau", "Cooperative", "Exchange", "Hub", "League", "Outfitters", "Studio",
];

/// 800 distinct lowercase keywords, sliced into disjoint per-sector pools
/// (20 per sector, matching the 40 sector names).
pub(crate) const KEYWORD_BANK: [&str; 800] = [
    // digital payments
    "checkout", "invoice", "settlement", "chargeback", "wallet", "remittance", "payout", "ledger",
    "acquiring", "issuing", "interchange", "merchant", "card", "installment", "refund", "payroll",
    "billing", "escrow", "micropayment", "gateway",
    // clinical diagnostics
    "assay", "biomarker", "pathology", "sequencing", "biopsy", "genomic", "serology", "reagent",
    "specimen", "cytology", "immunoassay", "radiology", "phenotype", "hematology", "screening",
    "molecular", "antibody", "diagnostic", "labtest", "sampling",
    // freight logistics
    "freight", "pallet", "waybill", "customs", "linehaul", "depot", "courier", "drayage",
    "manifest", "trucking", "warehouse", "fulfillment", "crossdock", "lastmile", "carrier",
    "dispatch", "routing", "tracking", "consolidation", "forwarding",
    // renewable energy
    "solar", "turbine", "photovoltaic", "inverter", "microgrid", "geothermal", "biomass",
    "windfarm", "megawatt", "offgrid", "feedin", "netmetering", "decarbonization",
    "hydroelectric", "tidal", "substation", "gridbalancing", "curtailment", "repowering",
    "powerstore",
    // retail commerce
    "storefront", "basket", "markdown", "planogram", "assortment", "shelf", "loyalty",
    "promotion", "pricing", "catalog", "dropship", "returns", "merchandising", "popup",
    "wholesale", "clearance", "upsell", "aisles", "shopper", "retailing",
    // game studios
    "multiplayer", "matchmaking", "leaderboard", "battlepass", "quest", "sandbox", "esports",
    "speedrun", "modding", "loot", "arcade", "console", "gamepad", "roguelike", "platformer",
    "shooter", "minigame", "tournament", "guildhall", "respawn",
    // cyber security
    "firewall", "malware", "phishing", "ransomware", "endpoint", "intrusion", "botnet",
    "encryption", "keychain", "zerotrust", "honeypot", "exploit", "vulnerability", "forensics",
    "redteam", "siem", "sandboxing", "threat", "breach", "patching",
    // industrial robotics
    "actuator", "gripper", "servo", "kinematics", "endeffector", "cobot", "palletizer",
    "weldcell", "machinevision", "pickplace", "gantry", "harmonic", "teachpendant", "workcell",
    "calibration", "trajectory", "manipulator", "automation", "conveyor", "roboarm",
    // crop science
    "agronomy", "seedling", "irrigation", "harvester", "fertilizer", "pesticide", "soilhealth",
    "yield", "greenhouse", "silage", "orchard", "livestock", "dairy", "grain", "tillage",
    "compost", "pollination", "cropdust", "agritech", "ranching",
    // streaming media
    "streaming", "transcode", "playlist", "episode", "subscriber", "royalty", "podcast",
    "broadcast", "showrunner", "syndication", "teleprompter", "dubbing", "subtitle", "trailer",
    "boxoffice", "viewership", "airtime", "newsroom", "anchor", "documentary",
    // travel booking
    "itinerary", "layover", "boarding", "redeye", "concierge", "resort", "hostel", "excursion",
    "faretype", "overbooking", "loyaltymiles", "charter", "visafree", "stopover", "airfare",
    "checkin", "amenity", "packagetour", "cruise", "wanderlust",
    // legal automation
    "paralegal", "docket", "deposition", "litigation", "clause", "statute", "subpoena",
    "affidavit", "arbitration", "compliance", "redlining", "notary", "brief", "precedent",
    "injunction", "tort", "counsel", "retainer", "jurisdiction", "caselaw",
    // online education
    "curriculum", "syllabus", "tutoring", "quizzes", "lecture", "enrollment", "cohort",
    "credential", "proctoring", "gradebook", "homework", "pedagogy", "literacy", "numeracy",
    "classroom", "semester", "scholarship", "alumni", "montessori", "edtech",
    // modular construction
    "formwork", "rebar", "scaffold", "drywall", "girder", "blueprint", "excavation", "concrete",
    "prefab", "mason", "roofing", "cladding", "surveying", "earthwork", "jobsite", "foreman",
    "subcontractor", "zoning", "retrofit", "buildout",
    // specialty chemicals
    "polymer", "catalyst", "resin", "solvent", "monomer", "pigment", "adhesive", "coating",
    "surfactant", "electrolyte", "distillation", "petrochemical", "oxidation", "titration",
    "formulation", "additive", "lubricant", "emulsion", "reactor", "alkaline",
    // property management
    "tenant", "leasing", "landlord", "occupancy", "sublease", "easement", "appraisal",
    "brokerage", "deed", "mortgage", "amenities", "vacancy", "renewal", "concession",
    "walkthrough", "maintenance", "hoa", "proptech", "listing", "staging",
    // talent recruiting
    "sourcing", "shortlist", "onboarding", "candidate", "resume", "headhunter", "referral",
    "interviewing", "offerletter", "backfill", "attrition", "staffing", "payband", "jobboard",
    "talentpool", "recruiter", "outplacement", "upskilling", "retention", "hiring",
    // cloud infrastructure
    "kubernetes", "container", "serverless", "autoscaling", "loadbalancer", "devops", "cluster",
    "orchestration", "microservice", "observability", "latency", "uptime", "failover",
    "provisioning", "terraform", "registry", "artifact", "pipeline", "rollback", "multicloud",
    // business analytics
    "dashboard", "funnel", "cohorting", "segmentation", "attribution", "forecast",
    "regression", "anomaly", "datamart", "etl", "metric", "kpi", "churn", "benchmark",
    "visualization", "drilldown", "snapshotting", "rollup", "insight", "telemetry",
    // electric mobility
    "charger", "battery", "drivetrain", "regen", "chademo", "gigafactory", "motorcontroller",
    "rangeanxiety", "supercharger", "escooter", "ebike", "micromobility", "fastcharge",
    "powertrain", "tractionmotor", "chargepoint", "swappable", "electrification", "vehiclegrid",
    "autonomy",
    // pet wellness
    "grooming", "kennel", "veterinary", "kibble", "microchip", "pedigree", "dewormer", "leash",
    "catnip", "aquarium", "terrarium", "pupsitter", "petboarding", "vaccination", "neutering",
    "petfood", "doggy", "feline", "canine", "pawcare",
    // marine shipping
    "stevedore", "containership", "ballast", "berth", "bunker", "deadweight", "demurrage",
    "drydock", "flagstate", "freightrate", "hull", "mooring", "portcall", "seafarer",
    "shipyard", "stowage", "tanker", "tonnage", "tugboat", "voyage",
    // craft beverages
    "brewery", "fermentation", "hops", "malt", "lager", "stout", "cidery", "distillery",
    "barrelaged", "taproom", "kombucha", "roastery", "espresso", "coldbrew", "vineyard",
    "sommelier", "bottling", "kegging", "mashbill", "tasting",
    // sports performance
    "athlete", "biometrics", "cardio", "coaching", "endurance", "hydration", "intervals",
    "kinesiology", "marathon", "agility", "nutrition", "pacing", "plyometrics",
    "recovery", "scrimmage", "sprinting", "strength", "taper", "vomax", "warmup",
    // weather intelligence
    "barometer", "convection", "doppler", "forecasting", "frontal", "hailstorm", "humidity",
    "isobar", "jetstream", "lightning", "mesoscale", "nowcast", "precipitation", "radarsite",
    "stormcell", "synoptic", "thermal", "turbulence", "windshear", "cyclone",
    // digital banking
    "overdraft", "deposits", "lending", "underwriting", "kyc", "neobank", "branchless",
    "custody", "treasury", "liquidity", "creditline", "debit", "savings", "checking",
    "openbanking", "interbank", "clearing", "chartered", "fiduciary", "trustfund",
    // smart appliances
    "thermostat", "dishwasher", "induction", "refrigeration", "airfryer", "humidifier",
    "dehumidifier", "smartplug", "doorbell", "homehub", "vacuumbot", "washer", "dryer",
    "purifier", "sensorled", "voicecontrol", "energysave", "appliance", "cooktop", "microwave",
    // space systems
    "payload", "orbital", "satellite", "thruster", "launchpad", "booster", "downlink",
    "groundstation", "cubesat", "geostationary", "propellant", "reentry", "docking", "flyby",
    "constellation", "spacewalk", "heatshield", "avionics", "apogee", "perigee",
    // waste recycling
    "composting", "curbside", "ewaste", "granulator", "incineration", "landfill", "materials",
    "pelletizing", "recyclate", "refurbish", "remanufacture", "scrapyard", "shredder",
    "sortation", "stewardship", "takeback", "upcycling", "wastestream", "zerowaste", "circular",
    // elder care
    "assisted", "caregiver", "companionship", "dementia", "geriatric", "homecare", "hospice",
    "independence", "primarycare", "walkeraid", "nursinghome", "palliative", "respite",
    "seniorliving", "telecare", "wellnesscheck", "fallalert", "memorycare", "adultday", "aging",
    // fashion resale
    "consignment", "thrifting", "vintage", "restyling", "capsule", "couture", "denim",
    "accessories", "streetwear", "resale", "authentication", "wardrobe", "lookbook",
    "upcycled", "tailoring", "runway", "stylist", "garment", "textile", "hemline",
    // event ticketing
    "boxseat", "venue", "presale", "scalping", "turnstile", "wristband", "festival", "matinee",
    "encore", "seatmap", "willcall", "raincheck", "admission", "headliner", "openingact",
    "promoter", "stagecrew", "soundcheck", "standingroom", "usher",
    // fleet telematics
    "odometer", "geofence", "dashcam", "canbus", "obd", "fleetcard", "idlealert", "fuelburn",
    "harshbraking", "hoursofservice", "loadfactor", "servicelog", "odometry", "platooning",
    "roadside", "speedgovernor", "tirepressure", "tollpass", "vin", "waypoint",
    // dental networks
    "orthodontic", "crown", "implant", "veneer", "hygienist", "molars", "fluoride", "braces",
    "aligner", "periodontal", "prophylaxis", "radiograph", "bitewing", "enamel", "extraction",
    "dentures", "bridgework", "gingival", "occlusion", "sealant",
    // forest products
    "timber", "sawmill", "plywood", "lumber", "silviculture", "clearcut", "reforestation",
    "pulpwood", "logging", "woodchip", "sawtimber", "forestry", "arborist", "canopy",
    "understory", "deadfall", "skidder", "stumpage", "treefarm", "woodlot",
    // micro insurance
    "actuarial", "premium", "deductible", "claims", "underwriter", "reinsurance", "parametric",
    "bancassurance", "annuity", "policyrider", "policyholder", "subrogation", "lossratio",
    "indemnity", "coverage", "exclusion", "peril", "microcover", "claimsbot", "adjuster",
    // voice assistants
    "wakeword", "utterance", "intent", "slotfilling", "asr", "tts", "dialog", "barge",
    "voiceprint", "hotword", "transcription", "diarization", "prosody", "phoneme", "speechgram",
    "soundboard", "earcon", "speechkit", "voicebot", "conversational",
    // quantum tooling
    "qubit", "decoherence", "entanglement", "superposition", "annealer", "gatefidelity",
    "cryostat", "transmon", "errorcorrection", "quantumgate", "interferometer", "photonic",
    "iontrap", "readout", "pulseshaping", "coherence", "braiding", "topological",
    "quantumvolume", "nisq",
    // water treatment
    "desalination", "filtration", "aquifer", "effluent", "potable", "chlorination", "membrane",
    "osmosis", "runoff", "sedimentation", "sludge", "stormwater", "wastewater", "wellhead",
    "hydrology", "coagulation", "fluoridation", "greywater", "leachate", "reclamation",
    // vertical farming
    "hydroponic", "aeroponic", "growlight", "nutrientfilm", "substrate", "verticalrack",
    "photoperiod", "transplanting", "microgreens", "propagation", "cultivar", "germination",
    "rootzone", "canopylight", "drip", "fertigation", "biocontrol", "pollinator", "harvestbot",
    "agridome",
];
