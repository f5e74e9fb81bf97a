// carto: command-line entry points for the elicitation service and the
// batch evaluation / statistics / export workflows.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "carto/concepts.hpp"
#include "carto/config.hpp"
#include "carto/elicitation.hpp"
#include "carto/eval.hpp"
#include "carto/export.hpp"
#include "carto/service.hpp"
#include "carto/stats.hpp"
#include "carto/storage.hpp"

namespace {

using carto::ErrorCode;
using carto::fail;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool dry_run = false;
  std::size_t workers = 1;
};

carto::Config load(const Common& c) {
  return c.config_path.empty() ? carto::Config{} : carto::load_config(c.config_path);
}

/// Dry runs talk to the deterministic mock instead of the configured provider.
std::shared_ptr<carto::llm::Gateway> gateway_for(const Common& c, carto::Config& cfg, const std::string& name,
                                                 bool search = false) {
  std::string provider = name.empty() ? cfg.default_provider : name;
  if (c.dry_run) provider = "mock";
  auto pc = cfg.provider(provider);
  if (search) pc.profile.supports_web_search = true;
  cfg.providers[provider] = pc;
  return carto::make_gateway(cfg, provider, c.seed);
}

/// Writes to `path`, or to stdout when the path is empty or this is a dry run.
void emit(const Common& c, const std::string& path, const std::string& data) {
  if (path.empty() || c.dry_run) {
    std::cout << data;
    if (!data.empty() && data.back() != '\n') std::cout << '\n';
    return;
  }
  carto::storage::write_file(path, data);
}

std::string jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

std::vector<carto::stats::LikertRecord> scores_from(const std::string& path) {
  return carto::storage::parse_scores_csv(carto::storage::read_file(path));
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file");
  app->add_option("--seed", c.seed, "Random seed");
  app->add_flag("--dry-run", c.dry_run, "Use the mock provider and print instead of writing files");
  app->add_option("--workers", c.workers, "Parallel provider calls");
}

int print_error(ErrorCode code, const std::string& message) {
  std::cerr << carto::service::error_json(code, message).dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-initiative knowledge elicitation: service, evaluation and analysis tools"};
  app.require_subcommand(1);
  Common common;

  // serve -------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  add_common(serve, common);
  std::string host;
  int port = -1;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");

  // eval ----------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Recall@K evaluation");
  eval->require_subcommand(1);
  auto* recall = eval->add_subcommand("recall", "Elicit answers and judge gold coverage");
  add_common(recall, common);
  std::string gold_path, provider_name, judge_name, report_out, table_out, missed_out, transcripts_out, compare_path;
  std::size_t k = 100, batch = 10;
  bool search = false;
  recall->add_option("--gold", gold_path, "Gold bank (JSON lines)")->required();
  recall->add_option("--k", k, "Answers elicited per question");
  recall->add_option("--batch-size", batch, "Answers requested per turn");
  recall->add_option("--provider", provider_name, "Provider profile under test");
  recall->add_option("--judge-model", judge_name, "Provider profile used as judge");
  recall->add_flag("--search", search, "Enable web search on the provider under test");
  recall->add_option("--out", report_out, "Report JSON");
  recall->add_option("--table", table_out, "Plain-text table");
  recall->add_option("--missed", missed_out, "Not-covered QA pairs (JSON lines)");
  recall->add_option("--transcripts", transcripts_out, "Elicitation transcripts (JSON lines)");
  recall->add_option("--compare", compare_path, "Earlier report to compare against");

  auto* validate = eval->add_subcommand("validate-judge", "Sample verdicts for audit, or score an audit");
  add_common(validate, common);
  std::string report_in, labels_path, sample_out;
  std::size_t n_uniform = 50, n_minority = 25;
  validate->add_option("--report", report_in, "Recall report JSON")->required();
  validate->add_option("--n-uniform", n_uniform, "Uniformly sampled verdicts");
  validate->add_option("--n-minority", n_minority, "Extra verdicts from the minority label");
  validate->add_option("--labels", labels_path, "Human labels (JSON lines {item, covered})");
  validate->add_option("--out", sample_out, "Output file");

  // stats ---------------------------------------------------------------------
  auto* stats_cmd = app.add_subcommand("stats", "Reliability statistics and preference pairs");
  stats_cmd->require_subcommand(1);
  std::string session_path, scores_path, variant = "icc2", stats_out;
  double alpha = 0.05;
  auto add_stats_inputs = [&](CLI::App* sub) {
    add_common(sub, common);
    sub->add_option("--session", session_path, "Session file");
    sub->add_option("--scores", scores_path, "Scores CSV (answer_id,annotator_id,score)");
    sub->add_option("--alpha", alpha, "Significance level");
    sub->add_option("--out", stats_out, "Output file");
  };
  auto* icc_cmd = stats_cmd->add_subcommand("icc", "Intraclass correlation of Likert scores");
  add_stats_inputs(icc_cmd);
  icc_cmd->add_option("--variant", variant, "icc1 | icc2 | icc3");
  auto* pairs_cmd = stats_cmd->add_subcommand("pairs", "Derive preference pairs");
  add_stats_inputs(pairs_cmd);
  auto* filter_cmd = stats_cmd->add_subcommand("filter", "Answers kept by the significance filter");
  add_stats_inputs(filter_cmd);

  // concepts ------------------------------------------------------------------
  auto* concepts_cmd = app.add_subcommand("concepts", "Concept induction over missed knowledge");
  add_common(concepts_cmd, common);
  std::string missed_in, concepts_out, concepts_table, embed_model, concept_provider;
  std::size_t clusters = 10;
  concepts_cmd->add_option("--missed", missed_in, "Not-covered QA pairs (JSON lines)")->required();
  concepts_cmd->add_option("--k", clusters, "Number of clusters");
  concepts_cmd->add_option("--embed-model", embed_model, "Embedding model name");
  concepts_cmd->add_option("--provider", concept_provider, "Provider profile");
  concepts_cmd->add_option("--out", concepts_out, "Prevalence report JSON");
  concepts_cmd->add_option("--table", concepts_table, "Plain-text prevalence table");

  // derive-seeds --------------------------------------------------------------
  auto* seeds_cmd = app.add_subcommand("derive-seeds", "Seed topic candidates from answers across cultures");
  add_common(seeds_cmd, common);
  std::vector<std::string> seed_sessions;
  std::string answers_in, seeds_out, seeds_provider;
  std::size_t seed_k = 8;
  seeds_cmd->add_option("--session", seed_sessions, "Session files (one country each)");
  seeds_cmd->add_option("--answers", answers_in, "Answers (JSON lines {country, answer})");
  seeds_cmd->add_option("--k", seed_k, "Number of clusters");
  seeds_cmd->add_option("--provider", seeds_provider, "Provider profile");
  seeds_cmd->add_option("--out", seeds_out, "Output file");

  // export --------------------------------------------------------------------
  auto* export_cmd = app.add_subcommand("export", "Gold banks, training data and score tables");
  add_common(export_cmd, common);
  std::vector<std::string> export_sessions;
  std::string subset_name, export_out, sft_out, dpo_out, scores_out, export_scores;
  double export_alpha = 0.05;
  export_cmd->add_option("--session", export_sessions, "Session files")->required();
  export_cmd->add_option("--scores", export_scores, "Scores CSV overriding the stored scores");
  export_cmd->add_option("--subset", subset_name, "synthetic | traditional | cartography");
  export_cmd->add_option("--out", export_out, "Gold bank output (JSON lines)");
  export_cmd->add_option("--sft", sft_out, "SFT records output (JSON lines)");
  export_cmd->add_option("--dpo", dpo_out, "DPO records output (JSON lines)");
  export_cmd->add_option("--scores-out", scores_out, "Scores CSV output");
  export_cmd->add_option("--alpha", export_alpha, "Significance level");

  // expand --------------------------------------------------------------------
  auto* expand_cmd = app.add_subcommand("expand", "Grow a tree breadth-first to a target depth");
  add_common(expand_cmd, common);
  std::string expand_session, expand_topic, expand_country = "nga", expand_out, expand_provider;
  std::size_t depth = 6, branching = 2;
  expand_cmd->add_option("--session", expand_session, "Existing session file");
  expand_cmd->add_option("--seed-topic", expand_topic, "Seed topic for a new tree");
  expand_cmd->add_option("--country", expand_country, "Country code for a new tree");
  expand_cmd->add_option("--depth", depth, "Target depth (6 = three rounds)");
  expand_cmd->add_option("--branching", branching, "Children per generation");
  expand_cmd->add_option("--provider", expand_provider, "Provider profile");
  expand_cmd->add_option("--out", expand_out, "Session output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(ErrorCode::InvalidArgument, e.what());
    return 2;
  }

  try {
    auto cfg = load(common);

    if (*serve) {
      if (!host.empty()) cfg.host = host;
      if (port >= 0) cfg.port = port;
      carto::service::ServiceOptions opts;
      opts.config = cfg;
      opts.seed = common.seed;
      if (common.dry_run) opts.config.default_provider = "mock";
      carto::service::SessionService svc(opts);
      carto::service::HttpServer server(svc);
      const int bound = server.bind(cfg.host, cfg.port);
      std::cout << json{{"listening", cfg.host + ":" + std::to_string(bound)}}.dump() << std::endl;
      if (common.dry_run) return 0;
      server.listen_after_bind();
      return 0;
    }

    if (*recall) {
      const auto gold = carto::eval::read_gold_bank(gold_path);
      auto subject = gateway_for(common, cfg, provider_name, search);
      auto judge = gateway_for(common, cfg, judge_name.empty() ? cfg.judge_provider : judge_name);
      const auto transcripts = carto::eval::elicit_bank(*subject, gold, {k, batch}, common.workers);
      const auto report = carto::eval::recall_at_k(gold, transcripts, *judge, {k, common.workers});
      auto j = carto::eval::to_json(report);
      if (!compare_path.empty()) {
        const auto other = carto::eval::report_from_json(json::parse(carto::storage::read_file(compare_path)));
        j["comparison"] = carto::eval::to_json(carto::eval::compare_runs(report, other));
      }
      emit(common, report_out, j.dump(2) + "\n");
      if (!table_out.empty()) {
        auto table = carto::eval::recall_table(report);
        if (!compare_path.empty()) {
          const auto other = carto::eval::report_from_json(json::parse(carto::storage::read_file(compare_path)));
          table += "\n" + carto::eval::comparison_table(carto::eval::compare_runs(report, other));
        }
        emit(common, table_out, table);
      }
      if (!missed_out.empty()) emit(common, missed_out, jsonl(carto::eval::missed_items(report)));
      if (!transcripts_out.empty()) {
        std::vector<json> rows;
        for (const auto& [q, t] : transcripts) rows.push_back(carto::eval::to_json(t));
        emit(common, transcripts_out, jsonl(rows));
      }
      return 0;
    }

    if (*validate) {
      const auto report = carto::eval::report_from_json(json::parse(carto::storage::read_file(report_in)));
      std::vector<std::optional<bool>> verdicts;
      for (const auto& it : report.items) verdicts.push_back(it.covered);
      if (labels_path.empty()) {
        const auto sample = carto::eval::validation_sample(verdicts, n_uniform, n_minority, common.seed);
        std::vector<json> rows;
        for (auto idx : sample.all()) {
          const auto& it = report.items[idx];
          rows.push_back({{"item", idx}, {"question", it.question}, {"gold", it.gold}});
        }
        emit(common, sample_out, jsonl(rows));
        if (sample.insufficient_minority) {
          std::cerr << carto::service::error_json(ErrorCode::InsufficientMinority,
                                                  "only " + std::to_string(sample.minority.size()) +
                                                      " minority items available")
                           .dump()
                    << std::endl;
        }
        return 0;
      }
      std::map<std::size_t, bool> human;
      for (const auto& row : carto::eval::read_jsonl_file(labels_path)) {
        human[row.at("item").get<std::size_t>()] = row.at("covered").get<bool>();
      }
      std::vector<bool> h, m;
      for (const auto& [idx, label] : human) {
        if (idx >= report.items.size() || !report.items[idx].covered) {
          fail(ErrorCode::InvalidArgument, "label for unknown or unparseable item " + std::to_string(idx));
        }
        h.push_back(label);
        m.push_back(*report.items[idx].covered);
      }
      const auto a = carto::eval::agreement_report(h, m);
      ojson out = ojson::object();
      out["n"] = a.n;
      out["agreements"] = a.agreements;
      out["percent_agreement"] = carto::eval::round_to(a.percent, 1);
      out["kappa"] = a.kappa ? ojson(*a.kappa) : ojson(nullptr);
      emit(common, sample_out, out.dump(2) + "\n");
      return 0;
    }

    if (*icc_cmd || *pairs_cmd || *filter_cmd) {
      std::optional<carto::KnowledgeTree> tree;
      if (!session_path.empty()) tree = carto::storage::load_session(session_path);
      std::vector<carto::stats::LikertRecord> records;
      if (!scores_path.empty()) {
        records = scores_from(scores_path);
      } else if (tree) {
        records = carto::stats::likert_records(*tree);
      } else {
        fail(ErrorCode::InvalidArgument, "pass --session and/or --scores");
      }
      carto::stats::SignificanceConfig sig{alpha, "welch"};
      ojson out = ojson::object();
      if (*icc_cmd) {
        const auto r = carto::stats::icc(carto::stats::score_matrix(records), carto::stats::parse_icc_variant(variant));
        out["variant"] = to_string(r.variant);
        out["icc"] = r.value;
        out["subjects"] = r.subjects_used;
        out["raters"] = r.raters_used;
        out["dropped_raters"] = r.dropped_raters;
        out["dropped_subjects"] = r.dropped_subjects;
      } else {
        if (!tree) fail(ErrorCode::InvalidArgument, "--session is required");
        if (*pairs_cmd) {
          const auto pairs = carto::stats::derive_preference_pairs(*tree, records, sig);
          std::size_t by_score = 0;
          ojson rows = ojson::array();
          for (const auto& p : pairs) {
            by_score += p.reason == carto::stats::PairReason::ScoreSignificant;
            ojson r = ojson::object();
            r["question"] = p.question.value;
            r["chosen"] = p.chosen.value;
            r["rejected"] = p.rejected.value;
            r["reason"] = to_string(p.reason);
            r["p"] = p.p ? ojson(*p.p) : ojson(nullptr);
            rows.push_back(std::move(r));
          }
          out["count"] = pairs.size();
          out["score_significant"] = by_score;
          out["human_over_model"] = pairs.size() - by_score;
          out["pairs"] = std::move(rows);
        } else {
          ojson rows = ojson::array();
          std::size_t kept_total = 0, dropped_total = 0;
          for (carto::NodeId q : tree->active_nodes()) {
            if (tree->node(q).kind != carto::NodeKind::Question) continue;
            auto scored = carto::stats::model_answer_scores(*tree, q, records);
            std::erase_if(scored, [](const auto& a) { return a.scores.empty(); });
            if (scored.empty()) continue;
            const auto f = carto::stats::filter_significant_answers(scored, sig);
            std::vector<std::uint64_t> kept, dropped;
            for (auto id : f.retained) kept.push_back(id.value);
            for (auto id : f.dropped) dropped.push_back(id.value);
            kept_total += kept.size();
            dropped_total += dropped.size();
            rows.push_back({{"question", q.value}, {"retained", kept}, {"dropped", dropped}});
          }
          out["retained"] = kept_total;
          out["dropped"] = dropped_total;
          out["questions"] = std::move(rows);
        }
      }
      emit(common, stats_out, out.dump(2) + "\n");
      return 0;
    }

    if (*concepts_cmd) {
      std::string provider = concept_provider;
      if (!embed_model.empty()) {
        auto pc = cfg.provider(provider.empty() ? cfg.default_provider : provider);
        pc.embed_model = embed_model;
        cfg.providers[pc.profile.name] = pc;
      }
      auto gw = gateway_for(common, cfg, provider);
      std::vector<carto::concepts::QaPair> missed;
      for (const auto& row : carto::eval::read_jsonl_file(missed_in)) {
        missed.push_back({row.at("question").get<std::string>(), row.at("answer").get<std::string>()});
      }
      const auto report = carto::concepts::induce_concepts(*gw, missed, {clusters, common.seed, common.workers});
      emit(common, concepts_out, carto::concepts::to_json(report).dump(2) + "\n");
      if (!concepts_table.empty()) emit(common, concepts_table, carto::concepts::prevalence_table(report));
      return 0;
    }

    if (*seeds_cmd) {
      std::map<std::string, std::vector<std::string>> corpora;
      for (const auto& path : seed_sessions) {
        const auto tree = carto::storage::load_session(path);
        for (carto::NodeId id : tree.active_nodes()) {
          if (tree.node(id).kind == carto::NodeKind::Answer) corpora[tree.meta().country].push_back(tree.node(id).text);
        }
      }
      if (!answers_in.empty()) {
        for (const auto& row : carto::eval::read_jsonl_file(answers_in)) {
          corpora[row.at("country").get<std::string>()].push_back(row.at("answer").get<std::string>());
        }
      }
      auto gw = gateway_for(common, cfg, seeds_provider);
      const auto topics = carto::concepts::derive_seed_topics(*gw, corpora, seed_k, common.seed);
      emit(common, seeds_out, json{{"seed_topics", topics}}.dump(2) + "\n");
      return 0;
    }

    if (*export_cmd) {
      std::vector<carto::KnowledgeTree> trees;
      for (const auto& p : export_sessions) trees.push_back(carto::storage::load_session(p));
      const auto override_scores = export_scores.empty() ? std::vector<carto::stats::LikertRecord>{} : scores_from(export_scores);
      std::vector<carto::exporting::SessionInput> inputs;
      for (const auto& t : trees) inputs.push_back({&t, override_scores});
      const carto::stats::SignificanceConfig sig{export_alpha, "welch"};
      bool any = false;
      if (!subset_name.empty()) {
        any = true;
        const auto items = carto::exporting::export_gold_bank(inputs, carto::eval::parse_subset(subset_name), sig);
        emit(common, export_out, carto::exporting::gold_bank_jsonl(items));
      }
      if (!sft_out.empty() || !dpo_out.empty()) {
        any = true;
        const auto data = carto::exporting::export_training_data(inputs, sig);
        if (!sft_out.empty()) emit(common, sft_out, carto::exporting::sft_jsonl(data.sft));
        if (!dpo_out.empty()) emit(common, dpo_out, carto::exporting::dpo_jsonl(data.dpo));
      }
      if (!scores_out.empty()) {
        any = true;
        std::vector<carto::stats::LikertRecord> all;
        for (const auto& in : inputs) {
          const auto r = carto::exporting::records_for(in);
          all.insert(all.end(), r.begin(), r.end());
        }
        emit(common, scores_out, carto::storage::scores_csv(all));
      }
      if (!any) fail(ErrorCode::InvalidArgument, "choose --subset, --sft, --dpo or --scores-out");
      return 0;
    }

    if (*expand_cmd) {
      std::optional<carto::KnowledgeTree> tree;
      if (!expand_session.empty()) {
        tree = carto::storage::load_session(expand_session);
      } else if (!expand_topic.empty()) {
        carto::RewardConfig reward;
        reward.reward_rate = cfg.reward_rate;
        // fixed timestamps keep seeded runs byte-identical
        tree.emplace(carto::SessionMeta{expand_country, "en", "cli", expand_topic}, reward, [] { return carto::Timestamp{0}; });
      } else {
        fail(ErrorCode::InvalidArgument, "pass --session or --seed-topic");
      }
      auto gw = gateway_for(common, cfg, expand_provider);
      carto::llm::TemplateRegistry registry;
      carto::ElicitationOptions opts;
      opts.max_depth = cfg.max_depth;
      const auto report = carto::expand_to_depth(*tree, *gw, registry.for_country(tree->meta().country), depth, branching, opts);
      for (const auto& f : report.failures) {
        std::cerr << carto::service::error_json(f.code, "branch " + carto::to_string(f.node) + ": " + f.message).dump()
                  << std::endl;
      }
      emit(common, expand_out, carto::storage::session_to_string(*tree));
      return 0;
    }
  } catch (const carto::Error& e) {
    return print_error(e.code(), e.message());
  } catch (const nlohmann::json::exception& e) {
    return print_error(ErrorCode::InvalidArgument, e.what());
  } catch (const std::exception& e) {
    return print_error(ErrorCode::IoError, e.what());
  }
  return 0;
}
