#pragma once

// Canonical experiment pipeline shared by the CLI, the alpha sweep and the
// test suites.
//
// Stages:
//   base:      echo pretraining on benign data, then a short compliance
//              fine-tune on the harmful queries' rejected responses. The
//              result answers benign queries and complies with harmful ones,
//              i.e. an undefended but capable model.
//   sft:       supervised safety fine-tuning on refusals + benign answers.
//   reference: min-max training of the adversarial reference from the base.
//   variants:  preference training. Following standard preference-tuning
//              practice the policy initializes from its reference model:
//              dpo / at-dpo anchor on (and start from) the sft model,
//              ar-dpo / adpo anchor on (and start from) the adversarial
//              reference.
//
// Preference stages run plain SGD: the preference loss saturates once the
// margin clears a few units of beta, which bounds total drift; an adaptive
// optimizer would keep renormalizing the vanishing gradients and walk the
// policy away from its reference. dpo / at-dpo use a larger beta than
// ar-dpo / adpo, keeping the relative order of the scaled-down recipe.

#include <cstdint>
#include <vector>

#include "adpo/eval.hpp"
#include "adpo/pca.hpp"
#include "adpo/trainer.hpp"

namespace adpo {

struct PipelinePresets {
  Dims dims;
  int n_harmful = 192;
  int n_benign = 200;

  int base_echo_epochs = 300;
  int base_comply_epochs = 8;
  int sft_epochs = 2;
  int ref_epochs = 5;
  int dpo_epochs = 10;   // dpo, at-dpo
  int adpo_epochs = 5;   // ar-dpo, adpo

  double pretrain_lr = 1e-3;  // adam stages: base, sft, reference
  double pref_lr = 0.02;      // sgd preference stages
  int batch_size = 16;

  double alpha = 30.0;
  double beta_dpo = 2.0;   // dpo, at-dpo
  double beta_adpo = 1.0;  // ar-dpo, adpo
  double utility_mix = 5.0 / 7.0;

  PerturbCfg train_attack{0.2, 0.02, 10, Norm::infinity, Space::image, 0};
  PerturbCfg eval_attack{0.2, 0.02, 50, Norm::infinity, Space::image, 0};

  SyntheticSpec data_spec(std::uint64_t seed) const {
    SyntheticSpec s;
    s.dims = dims;
    s.n_harmful = n_harmful;
    s.n_benign = n_benign;
    s.seed = seed;
    return s;
  }

  TrainCfg sft_stage_cfg(std::uint64_t stage_seed, int epochs) const {
    TrainCfg c;
    c.learning_rate = pretrain_lr;
    c.batch_size = batch_size;
    c.epochs = epochs;
    c.loss.variant = Variant::sft;
    c.seed = stage_seed;
    return c;
  }

  TrainCfg reference_cfg(std::uint64_t seed, double alpha_override, Space space) const {
    TrainCfg c;
    c.learning_rate = pretrain_lr;
    c.batch_size = batch_size;
    c.epochs = ref_epochs;
    c.loss.variant = Variant::sft;  // the reference objective has no preference variant
    c.loss.alpha = alpha_override;
    c.utility_mix = utility_mix;
    c.perturb = train_attack;
    c.perturb.space = space;
    if (space == Space::latent) c.perturb.norm = Norm::l2;
    c.seed = derive_seed(seed, "train-reference");
    return c;
  }

  TrainCfg variant_cfg(std::uint64_t seed, Variant variant, Space space) const {
    TrainCfg c;
    bool adversarial_ref = variant == Variant::ar_dpo || variant == Variant::adpo;
    c.learning_rate = pref_lr;
    c.optimizer.kind = OptKind::sgd;
    c.batch_size = batch_size;
    c.epochs = adversarial_ref ? adpo_epochs : dpo_epochs;
    c.loss.variant = variant;
    c.loss.beta = adversarial_ref ? beta_adpo : beta_dpo;
    c.loss.perturb_space = variant_uses_perturbation(variant)
                               ? (space == Space::latent ? LossSpace::latent : LossSpace::image)
                               : LossSpace::none;
    c.perturb = train_attack;
    c.perturb.space = space;
    if (space == Space::latent) c.perturb.norm = Norm::l2;
    c.seed = derive_seed(seed, "train-dpo");
    return c;
  }
};

// Two-phase base pretraining: deep echo skill, shallow compliance.
inline ToyVlmParams train_base_model(const PipelinePresets& presets, const SyntheticData& data,
                                     std::uint64_t seed) {
  ToyVlmParams init = init_params(derive_seed(seed, "init"), presets.dims);
  ToyVlmParams echo =
      train_sft(init, data.benign_train,
                presets.sft_stage_cfg(derive_seed(seed, "train-echo"), presets.base_echo_epochs))
          .params;
  std::vector<PreferenceExample> corpus = compliance_corpus(data.benign_train, data.harmful_train);
  return train_sft(echo, corpus,
                   presets.sft_stage_cfg(derive_seed(seed, "train-comply"),
                                         presets.base_comply_epochs))
      .params;
}

inline ToyVlmParams train_sft_model(const PipelinePresets& presets, const ToyVlmParams& base,
                                    const SyntheticData& data, std::uint64_t seed) {
  std::vector<PreferenceExample> corpus = data.harmful_train;
  corpus.insert(corpus.end(), data.benign_train.begin(), data.benign_train.end());
  return train_sft(base, corpus,
                   presets.sft_stage_cfg(derive_seed(seed, "train-sft"), presets.sft_epochs))
      .params;
}

inline ToyVlmParams train_reference_model(const PipelinePresets& presets, const ToyVlmParams& base,
                                          const SyntheticData& data, std::uint64_t seed,
                                          double alpha, Space space) {
  return train_reference(base, data.harmful_train, data.benign_train,
                         presets.reference_cfg(seed, alpha, space))
      .params;
}

// Preference stage; the reference doubles as the policy initializer.
inline ToyVlmParams train_preference_model(const PipelinePresets& presets,
                                           const ToyVlmParams& reference_model,
                                           const SyntheticData& data, std::uint64_t seed,
                                           Variant variant, Space space) {
  return train_dpo(reference_model, reference_model, data.harmful_train,
                   presets.variant_cfg(seed, variant, space))
      .params;
}

// Anchor query sets for the representation analysis: fresh draws from the
// data generator under a dedicated stream.
inline void make_anchor_queries(const PipelinePresets& presets, std::uint64_t seed, int per_group,
                                std::vector<Query>& queries, std::vector<QueryGroup>& labels) {
  SyntheticSpec spec = presets.data_spec(seed);
  spec.seed = derive_seed(seed, "anchors");
  // generate enough of both kinds in one pass
  spec.n_harmful = 3 * (per_group / 3 + 2);
  spec.n_benign = per_group + 4;
  SyntheticData anchors = make_synthetic(spec);
  std::vector<PreferenceExample> harmful = anchors.harmful_train;
  harmful.insert(harmful.end(), anchors.harmful_eval.begin(), anchors.harmful_eval.end());
  std::vector<PreferenceExample> benign = anchors.benign_train;
  benign.insert(benign.end(), anchors.benign_eval.begin(), anchors.benign_eval.end());
  for (int i = 0; i < per_group; ++i) {
    queries.push_back(harmful[static_cast<std::size_t>(i)].query);
    labels.push_back(QueryGroup::harmful_anchor);
  }
  for (int i = 0; i < per_group; ++i) {
    queries.push_back(benign[static_cast<std::size_t>(i)].query);
    labels.push_back(QueryGroup::harmless_anchor);
  }
}

struct RepresentationAnalysis {
  Tensor projections;  // anchors first, then eval groups
  std::vector<QueryGroup> labels;
  PcaResult pca;  // fit on the anchor rows only
  ClusterGeometry geometry;
};

// Fig-style analysis: anchors define the basis, harmful eval queries are
// projected clean and under attack. The attacked group uses the training
// attack budget; the stronger evaluation attack mostly wanders along the
// robust model's flat directions and only adds centroid noise.
inline RepresentationAnalysis analyze_representations(const PipelinePresets& presets,
                                                      const ToyVlmParams& params,
                                                      const std::vector<PreferenceExample>& harmful_eval,
                                                      std::uint64_t seed, int anchors_per_group = 100) {
  if (harmful_eval.empty()) throw AnalysisError("pca: empty eval group 'eval-clean'");
  std::vector<Query> anchor_queries;
  std::vector<QueryGroup> anchor_labels;
  make_anchor_queries(presets, seed, anchors_per_group, anchor_queries, anchor_labels);

  HiddenMatrix anchors = collect_hidden(params, anchor_queries, anchor_labels);
  RepresentationAnalysis out;
  out.pca = pca_top2(anchors.rows);

  PerturbCfg analysis_attack = presets.train_attack;
  analysis_attack.space = Space::image;
  analysis_attack.norm = Norm::infinity;

  std::vector<Query> eval_queries;
  std::vector<QueryGroup> eval_labels;
  for (const PreferenceExample& ex : harmful_eval) {
    eval_queries.push_back(ex.query);
    eval_labels.push_back(QueryGroup::eval_clean);
  }
  for (const PreferenceExample& ex : harmful_eval) {
    Perturbation delta = pgd_image(params, ex.query, ex.y_r, analysis_attack);
    eval_queries.push_back(Query{apply_image_delta(ex.query.image, delta.delta), ex.query.text});
    eval_labels.push_back(QueryGroup::eval_attacked);
  }
  HiddenMatrix evals = collect_hidden(params, eval_queries, eval_labels);
  Tensor eval_proj = pca_project(out.pca, evals.rows);

  out.projections = Tensor(out.pca.projections.rows + eval_proj.rows, 2);
  for (int i = 0; i < out.pca.projections.rows; ++i) {
    out.projections.at(i, 0) = out.pca.projections.at(i, 0);
    out.projections.at(i, 1) = out.pca.projections.at(i, 1);
  }
  for (int i = 0; i < eval_proj.rows; ++i) {
    out.projections.at(out.pca.projections.rows + i, 0) = eval_proj.at(i, 0);
    out.projections.at(out.pca.projections.rows + i, 1) = eval_proj.at(i, 1);
  }
  out.labels = anchor_labels;
  out.labels.insert(out.labels.end(), eval_labels.begin(), eval_labels.end());
  out.geometry = cluster_geometry(out.projections, out.labels);
  return out;
}

struct SweepRow {
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double asr = 0.0;
  double fhr = 0.0;
};

// Full two-stage pipeline per (alpha, seed): reference training at that
// alpha, then the combined variant; rows report white-box ASR and FHR.
inline std::vector<SweepRow> alpha_sweep(const PipelinePresets& presets,
                                         const std::vector<double>& alphas,
                                         const std::vector<std::uint64_t>& seeds) {
  if (alphas.empty()) throw std::invalid_argument("alpha_sweep: alphas must be non-empty");
  std::vector<SweepRow> rows;
  for (double alpha : alphas) {
    for (std::uint64_t seed : seeds) {
      SyntheticData data = make_synthetic(presets.data_spec(seed));
      ToyVlmParams base = train_base_model(presets, data, seed);
      ToyVlmParams ref = train_reference_model(presets, base, data, seed, alpha, Space::image);
      ToyVlmParams model = train_preference_model(presets, ref, data, seed, Variant::adpo, Space::image);
      double asr = eval_asr(model, data.harmful_eval, AttackKind::whitebox, presets.eval_attack).asr;
      double fhr = eval_utility(model, data.benign_eval).fhr;
      rows.push_back(SweepRow{alpha, seed, asr, fhr});
    }
  }
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("sweep: cannot open '" + path + "' for writing");
  out << "alpha,seed,asr,fhr\n";
  for (const SweepRow& r : rows)
    out << format_double(r.alpha) << "," << r.seed << "," << format_double(r.asr) << ","
        << format_double(r.fhr) << "\n";
}

}  // namespace adpo
