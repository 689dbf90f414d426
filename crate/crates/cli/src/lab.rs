//! Concrete models, oracles and schemes for a resolved experiment.

use anyhow::{Context as _, Result};
use wmlab_core::schemes::{ExpScheme, KgwScheme, SyntheticScheme, UnigramScheme, WatermarkScheme};
use wmlab_core::setups::{ProposalKind, TheoremSetup};
use wmlab_core::toy_models::text_format::read_model;
use wmlab_core::toy_models::{MarkovModel, OutputSpace, ReferenceQuality, SpanPerturber};
use wmlab_core::{Prompt, RngStream};

use crate::config::{Experiment, SchemeSpec, SetupKind};

pub struct Lab {
    pub model: MarkovModel,
    pub quality: ReferenceQuality,
    pub perturber: SpanPerturber,
    pub scheme: Box<dyn WatermarkScheme>,
    pub prompt: Prompt,
    /// Present for the enumerable setup.
    pub theorem: Option<TheoremSetup>,
}

pub fn build_scheme(spec: &SchemeSpec) -> Result<Box<dyn WatermarkScheme>> {
    Ok(match spec {
        SchemeSpec::Kgw(p) => Box::new(KgwScheme::new(*p)?),
        SchemeSpec::Unigram(p) => Box::new(UnigramScheme::new(*p)?),
        SchemeSpec::Exp(p) => Box::new(ExpScheme::new(*p)?),
        SchemeSpec::Synthetic(p) => Box::new(SyntheticScheme::new(*p)?),
    })
}

fn proposal_model(kind: ProposalKind, reference: &MarkovModel) -> Result<MarkovModel> {
    let vocab = reference.vocab().size();
    Ok(match kind {
        ProposalKind::Reference => reference.clone(),
        ProposalKind::Uniform => MarkovModel::uniform(vocab, 1, reference.length())?,
        ProposalKind::Onehot => {
            let mut p = vec![0.0; vocab];
            p[0] = 1.0;
            MarkovModel::iid(&p, 1, reference.length())?
        }
    })
}

impl Lab {
    pub fn new(e: &Experiment) -> Result<Self> {
        let scheme = build_scheme(&e.scheme)?;
        match e.setup {
            SetupKind::Enumerable => {
                let params = e.theorem_params().expect("enumerable setup");
                let setup = TheoremSetup::new(params)?;
                Ok(Lab {
                    model: setup.model.clone(),
                    quality: setup.quality.clone(),
                    perturber: setup.perturber.clone(),
                    scheme,
                    prompt: setup.prompt.clone(),
                    theorem: Some(setup),
                })
            }
            SetupKind::Chain => {
                let rng = RngStream::new(e.model.model_seed, "kgw-setup");
                let model = match &e.model.file {
                    Some(path) => {
                        let text = std::fs::read_to_string(path)
                            .with_context(|| format!("reading model_file {}", path.display()))?;
                        read_model(&text)
                            .with_context(|| format!("parsing model_file {}", path.display()))?
                            .with_length(e.model.length)
                    }
                    None => MarkovModel::random_order_one(
                        e.model.vocab,
                        e.model.length,
                        e.model.sharpness,
                        &mut rng.child("model"),
                    )?,
                };
                let prompt = Prompt::empty("kgw");
                let quality = ReferenceQuality::calibrated(
                    model.clone(),
                    &prompt,
                    e.model.length,
                    e.calibration_samples,
                    0.75,
                    3.0,
                    &mut rng.child("calibration"),
                )?;
                let perturber = SpanPerturber::new(
                    proposal_model(e.proposal, &model)?,
                    e.span_length,
                    e.top_p,
                )?;
                Ok(Lab {
                    model,
                    quality,
                    perturber,
                    scheme,
                    prompt,
                    theorem: None,
                })
            }
        }
    }

    /// Every output of the model, if there are at most `cap` of them.
    pub fn output_space(&self, cap: usize) -> Result<OutputSpace> {
        Ok(OutputSpace::new(
            self.model.vocab(),
            self.model.length(),
            cap,
        )?)
    }
}
