// apgcn: ingest datasets, train, and run evaluation grids and sweeps.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "apgcn/apgcn.hpp"
#include "apgcn/cli.hpp"

namespace {

using namespace apgcn;

struct OutTarget {
  std::string path;
  std::unique_ptr<std::ofstream> file;

  std::ostream& open() {
    if (path.empty() || path == "-") return std::cout;
    file = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
    if (!*file) throw DataError(DataErrc::io, "cannot open for writing: " + path);
    return *file;
  }
};

void add_train_flags(CLI::App* sub, TrainConfig& c, cli::SplitOptions& s, std::string& bundle, bool& timing) {
  sub->add_option("--bundle", bundle, "APGB1 dataset bundle")->required();
  sub->add_option("--alpha", c.alpha, "propagation penalty")->capture_default_str();
  sub->add_option("--epsilon", c.epsilon, "halting tolerance")->capture_default_str();
  sub->add_option("--max-steps", c.max_steps, "maximum propagation steps T")->capture_default_str();
  sub->add_option("--hidden", c.hidden, "hidden units")->capture_default_str();
  sub->add_option("--dropout", c.dropout, "feature and hidden dropout")->capture_default_str();
  sub->add_option("--adjacency-dropout", c.adjacency_dropout, "edge dropout")->capture_default_str();
  sub->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
  sub->add_option("--l2", c.l2_first_layer, "l2 on the first layer weights")->capture_default_str();
  sub->add_flag("--l2-bias", c.l2_include_bias, "also regularise the first layer bias");
  sub->add_option("--halting-period", c.halting_period, "halting unit update period")->capture_default_str();
  sub->add_option("--max-epochs", c.max_epochs)->capture_default_str();
  sub->add_option("--patience", c.patience)->capture_default_str();
  sub->add_option("--penalty", c.penalty, "reduce node costs by sum or mean")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, PenaltyReduction>{{"sum", PenaltyReduction::sum}, {"mean", PenaltyReduction::mean}}));
  sub->add_option("--p-mode", c.p_mode, "combination weights")
      ->transform(CLI::CheckedTransformer(std::map<std::string, PMode>{{"act", PMode::act}, {"literal", PMode::literal}}));
  sub->add_option("--operator", c.op_kind, "propagation operator")
      ->transform(CLI::CheckedTransformer(std::map<std::string, OperatorKind>{
          {"renorm", OperatorKind::renorm_adjacency}, {"laplacian", OperatorKind::sym_laplacian}}));
  sub->add_option("--model", c.model, "adaptive or fixed-step propagation")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, ModelKind>{{"adaptive", ModelKind::adaptive}, {"fixed", ModelKind::fixed}}));
  sub->add_option("--halting-init", c.halting_init, "initial halting bias")
      ->transform(CLI::CheckedTransformer(std::map<std::string, HaltingInit>{
          {"neutral", HaltingInit::neutral}, {"long", HaltingInit::long_budget}}));
  sub->add_option("--fixed-steps", c.fixed_steps, "steps for --model fixed")->capture_default_str();
  sub->add_option("--n-per-class", s.n_per_class, "labelled training nodes per class")->capture_default_str();
  sub->add_option("--visible-size", s.visible_size)->capture_default_str();
  sub->add_option("--stopping-size", s.stopping_size)->capture_default_str();
  sub->add_flag("--timing", timing, "include wall time per epoch (output is no longer reproducible)");
}

std::vector<std::uint64_t> seq(std::uint64_t first, std::size_t n) {
  std::vector<std::uint64_t> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(first + i);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive-propagation graph convolutional node classifier"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);
  OutTarget out;

  cli::IngestOptions ing;
  auto* c_ing = app.add_subcommand("ingest", "convert text edges/features/labels to a bundle");
  c_ing->add_option("--edges", ing.edges)->required()->check(CLI::ExistingFile);
  c_ing->add_option("--features", ing.features)->required()->check(CLI::ExistingFile);
  c_ing->add_option("--labels", ing.labels)->required()->check(CLI::ExistingFile);
  c_ing->add_option("--out", ing.out, "bundle path")->required();

  SbmSpec sbm;
  std::string sbm_out;
  auto* c_sbm = app.add_subcommand("generate-sbm", "write a stochastic block model bundle");
  c_sbm->add_option("--blocks", sbm.blocks)->capture_default_str();
  c_sbm->add_option("--nodes-per-block", sbm.nodes_per_block)->capture_default_str();
  c_sbm->add_option("--p-in", sbm.p_in)->capture_default_str();
  c_sbm->add_option("--p-out", sbm.p_out)->capture_default_str();
  c_sbm->add_option("--feature-noise", sbm.feature_noise)->capture_default_str();
  c_sbm->add_option("--seed", sbm.seed)->envname("APGCN_SEED")->capture_default_str();
  c_sbm->add_option("--out", sbm_out)->required();

  cli::TrainOptions tr;
  auto* c_tr = app.add_subcommand("train", "one training run; JSON lines per epoch plus summary");
  add_train_flags(c_tr, tr.config, tr.split, tr.bundle, tr.timing);
  c_tr->add_option("--split-seed", tr.split_seed)->envname("APGCN_SEED")->capture_default_str();
  c_tr->add_option("--init-seed", tr.init_seed)->envname("APGCN_SEED")->capture_default_str();
  c_tr->add_option("--out", out.path, "output file, default stdout");

  cli::GridCliOptions gr;
  std::string plan = "reduced";
  std::size_t n_splits = 0, n_inits = 0;
  std::uint64_t seed_base = 1;
  std::vector<double> alphas;
  std::vector<std::size_t> sizes;
  auto* c_pr = app.add_subcommand("protocol", "split x init grid with bootstrap summary");
  auto* c_sa = app.add_subcommand("sweep-alpha", "protocol grid for each alpha");
  auto* c_ss = app.add_subcommand("sweep-trainsize", "protocol grid for each labels-per-class count");
  for (auto* sub : {c_pr, c_sa, c_ss}) {
    add_train_flags(sub, gr.config, gr.split, gr.bundle, gr.timing);
    sub->add_option("--plan", plan, "full (20 splits x 5 inits) or reduced (5 x 1)")
        ->check(CLI::IsMember({"full", "reduced"}))
        ->capture_default_str();
    sub->add_option("--splits", n_splits, "override the number of split seeds");
    sub->add_option("--inits", n_inits, "override the number of init seeds");
    sub->add_option("--seed", seed_base, "first seed of both seed ranges")->envname("APGCN_SEED")->capture_default_str();
    sub->add_option("--jobs", gr.jobs, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--out", out.path, "output file, default stdout");
  }
  c_sa->add_option("--alphas", alphas, "alpha values")->required()->expected(1, -1);
  c_ss->add_option("--sizes", sizes, "labelled nodes per class")->required()->expected(1, -1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kUsage;
  }

  try {
    if (*c_ing) return cli::cmd_ingest(ing, std::cout);
    if (*c_sbm) {
      const auto g = generate_sbm(sbm);
      save_bundle(g, sbm_out);
      std::cout << cli::format_stats(cli::stats_of(g)) << '\n';
      return cli::kOk;
    }
    if (*c_tr) return cli::cmd_train(tr, out.open());

    const bool full = plan == "full";
    gr.split_seeds = seq(seed_base, n_splits ? n_splits : (full ? 20 : 5));
    gr.init_seeds = seq(seed_base, n_inits ? n_inits : (full ? 5 : 1));
    if (*c_pr) return cli::cmd_protocol(gr, out.open());
    if (*c_sa) return cli::cmd_sweep_alpha(gr, alphas, out.open());
    if (*c_ss) return cli::cmd_sweep_trainsize(gr, sizes, out.open());
  } catch (const std::exception& e) {
    std::cerr << "apgcn: " << e.what() << '\n';
    return cli::exit_code_for(e);
  }
  return cli::kUsage;
}
