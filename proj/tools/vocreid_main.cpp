/**
 * @file vocreid_main.cpp
 * @brief Command-line surface of the retrieval engine.
 *
 * Subcommands:
 *   synth    - generate a synthetic dataset (three branches + metadata)
 *   dist     - one branch's cosine similarity block (qg, qq, or gg)
 *   fuse     - combine branch similarity matrices with penalty weights
 *   rerank   - k-reciprocal re-ranking of a fused matrix
 *   eval     - mAP / CMC report for a score matrix
 *   loss     - circle / triplet forward values on a sampled batch
 *   pipeline - full run: track -> similarity -> fuse -> rerank -> eval
 *
 * Every subcommand is a pure function of its input files and flags; identical
 * inputs produce byte-identical outputs regardless of --threads.
 */
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vocreid/vocreid.hpp"

namespace {

using vocreid::Branch;
using vocreid::Error;
using vocreid::ErrorCategory;
using vocreid::ScoreKind;

std::vector<Branch> parse_branch_list(const std::string& spec) {
    if (spec.empty() || spec == "all")
        return {Branch::vehicle, Branch::orientation, Branch::camera};
    std::vector<Branch> out;
    std::size_t start = 0;
    while (start <= spec.size()) {
        const std::size_t comma = spec.find(',', start);
        const std::string name =
            spec.substr(start, comma == std::string::npos ? std::string::npos
                                                          : comma - start);
        if (name == "vehicle")
            out.push_back(Branch::vehicle);
        else if (name == "orientation")
            out.push_back(Branch::orientation);
        else if (name == "camera")
            out.push_back(Branch::camera);
        else
            throw Error(ErrorCategory::Config,
                        "unknown branch \"" + name + "\" in --track-agg");
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::optional<vocreid::HardCameraMode> parse_hard_camera(const std::string& s) {
    if (s == "off") return std::nullopt;
    if (s == "exclude") return vocreid::HardCameraMode::exclude_same_camera;
    if (s == "eq5") return vocreid::HardCameraMode::literal_eq5;
    throw Error(ErrorCategory::Config,
                "--hard-camera must be off, exclude, or eq5");
}

vocreid::Dataset load_dataset(const std::string& vehicle_path,
                              const std::string& orientation_path,
                              const std::string& camera_path,
                              const std::string& meta_path) {
    std::vector<vocreid::EmbeddingMatrix> branches;
    branches.push_back(vocreid::read_embeddings(vehicle_path, Branch::vehicle));
    if (!orientation_path.empty())
        branches.push_back(
            vocreid::read_embeddings(orientation_path, Branch::orientation));
    if (!camera_path.empty())
        branches.push_back(vocreid::read_embeddings(camera_path, Branch::camera));
    return vocreid::Dataset::validate(std::move(branches),
                                      vocreid::read_metadata(meta_path));
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorCategory::Io, "cannot create directory: " + dir);
}

// =============================================================================
// synth
// =============================================================================

struct SynthArgs {
    vocreid::SynthConfig config;
    std::string out_dir;
};

void run_synth(const SynthArgs& args) {
    const vocreid::SynthDataset synth = vocreid::generate(args.config);
    ensure_dir(args.out_dir);
    const auto& ds = synth.dataset;
    vocreid::write_embeddings(args.out_dir + "/vehicle.voce",
                              ds.branch(Branch::vehicle));
    vocreid::write_embeddings(args.out_dir + "/orientation.voce",
                              ds.branch(Branch::orientation));
    vocreid::write_embeddings(args.out_dir + "/camera.voce",
                              ds.branch(Branch::camera));
    vocreid::write_metadata(args.out_dir + "/meta.csv", ds.meta());
    std::printf("wrote %zu items (%zu queries, %zu gallery) to %s\n",
                ds.size(), ds.num_queries(), ds.num_gallery(),
                args.out_dir.c_str());
}

// =============================================================================
// dist
// =============================================================================

struct DistArgs {
    std::string embeddings, meta, out, block = "qg";
    bool track_agg = false;
    std::size_t threads = 1;
};

void run_dist(const DistArgs& args) {
    // branch tag is irrelevant for a single-branch distance computation
    vocreid::EmbeddingMatrix all =
        vocreid::read_embeddings(args.embeddings, Branch::vehicle);
    const auto meta = vocreid::read_metadata(args.meta);
    if (meta.size() != all.rows())
        throw Error(ErrorCategory::Validation,
                    "metadata rows do not match embedding rows");

    std::vector<std::size_t> q_idx, g_idx;
    for (std::size_t i = 0; i < meta.size(); ++i)
        (meta[i].split == vocreid::Split::query ? q_idx : g_idx).push_back(i);
    if (g_idx.empty())
        throw Error(ErrorCategory::Validation, "empty gallery split");

    auto take = [&](const std::vector<std::size_t>& idx) {
        vocreid::EmbeddingMatrix out(idx.size(), all.dims(), Branch::vehicle);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto src = all.row(idx[i]);
            auto dst = out.row(i);
            std::copy(src.begin(), src.end(), dst.begin());
        }
        return out;
    };

    std::optional<vocreid::EmbeddingMatrix> gallery;
    if (args.block == "qg" || args.block == "gg") {
        gallery = take(g_idx);
        if (args.track_agg) {
            std::vector<vocreid::ItemMeta> meta_g;
            for (std::size_t i : g_idx) meta_g.push_back(meta[i]);
            gallery = vocreid::track_aggregate(*gallery, meta_g);
        }
    }

    vocreid::SimilarityMatrix result = [&] {
        if (args.block == "qg") {
            if (q_idx.empty())
                throw Error(ErrorCategory::Validation, "empty query split");
            return vocreid::similarity_matrix(take(q_idx), *gallery,
                                              args.threads);
        }
        if (args.block == "qq") {
            if (q_idx.empty())
                throw Error(ErrorCategory::Validation, "empty query split");
            const auto queries = take(q_idx);
            return vocreid::similarity_matrix(queries, queries, args.threads);
        }
        if (args.block == "gg")
            return vocreid::similarity_matrix(*gallery, *gallery, args.threads);
        throw Error(ErrorCategory::Config, "--block must be qg, qq, or gg");
    }();
    vocreid::write_matrix(args.out, result);
    std::printf("wrote %zux%zu similarity block to %s\n", result.q_rows(),
                result.g_cols(), args.out.c_str());
}

// =============================================================================
// fuse
// =============================================================================

struct FuseArgs {
    std::string vehicle, orientation, camera, out;
    vocreid::FusionWeights weights;
};

void run_fuse(const FuseArgs& args) {
    const auto sv = vocreid::read_matrix(args.vehicle, ScoreKind::similarity);
    std::optional<vocreid::SimilarityMatrix> so, sc;
    if (!args.orientation.empty())
        so = vocreid::read_matrix(args.orientation, ScoreKind::similarity);
    if (!args.camera.empty())
        sc = vocreid::read_matrix(args.camera, ScoreKind::similarity);
    const auto fused = vocreid::voc_fuse(sv, so ? &*so : nullptr,
                                         sc ? &*sc : nullptr, args.weights);
    vocreid::write_matrix(args.out, fused);
    std::printf("wrote %zux%zu fused matrix to %s\n", fused.q_rows(),
                fused.g_cols(), args.out.c_str());
}

// =============================================================================
// rerank
// =============================================================================

struct RerankArgs {
    std::string fused, query_self, gallery_self, out;
    vocreid::RerankConfig config;
};

void run_rerank(const RerankArgs& args) {
    const auto fused = vocreid::read_matrix(args.fused, ScoreKind::similarity);
    const auto qq = vocreid::read_matrix(args.query_self, ScoreKind::similarity);
    const auto gg =
        vocreid::read_matrix(args.gallery_self, ScoreKind::similarity);
    const auto result = vocreid::k_reciprocal_rerank(fused, qq, gg, args.config);
    vocreid::write_matrix(args.out, result);
    std::printf("wrote %zux%zu re-ranked distance matrix to %s\n",
                result.q_rows(), result.g_cols(), args.out.c_str());
}

// =============================================================================
// eval
// =============================================================================

struct EvalArgs {
    std::string scores, meta, out_report, out_table, kind = "similarity";
    std::size_t topk = 0;
    std::size_t threads = 1;
};

void run_eval(const EvalArgs& args) {
    if (args.kind != "similarity" && args.kind != "distance")
        throw Error(ErrorCategory::Config,
                    "--kind must be similarity or distance");
    const ScoreKind kind = args.kind == "similarity" ? ScoreKind::similarity
                                                     : ScoreKind::distance;
    const auto scores = vocreid::read_matrix(args.scores, kind);
    const auto meta = vocreid::read_metadata(args.meta);

    std::vector<vocreid::ItemMeta> meta_q, meta_g;
    for (const auto& m : meta)
        (m.split == vocreid::Split::query ? meta_q : meta_g).push_back(m);
    if (meta_q.size() != scores.q_rows() || meta_g.size() != scores.g_cols())
        throw Error(ErrorCategory::Validation,
                    "metadata split sizes do not match score matrix shape");

    const auto masks = vocreid::build_masks(meta_q, meta_g);
    const auto report =
        vocreid::evaluate(scores, masks, {args.topk, args.threads});

    nlohmann::ordered_json line{
        {"config",
         nlohmann::ordered_json{{"kind", args.kind}, {"topk", args.topk}}},
        {"map", report.map},
        {"rank1", report.rank_at(0)},
        {"rank5", report.rank_at(4)},
        {"num_queries", report.num_queries},
        {"skipped_queries", report.skipped_queries.size()},
    };
    const std::string jsonl = line.dump() + "\n";
    if (!args.out_report.empty())
        vocreid::write_file_synced(args.out_report, jsonl);
    std::fputs(jsonl.c_str(), stdout);
}

// =============================================================================
// loss
// =============================================================================

struct LossArgs {
    std::string embeddings, meta;
    std::size_t classes = 4;    // P
    std::size_t instances = 16; // K
    std::uint64_t seed = 0;
    vocreid::LossConfig config;
};

void run_loss(const LossArgs& args) {
    std::vector<vocreid::EmbeddingMatrix> branches;
    branches.push_back(
        vocreid::read_embeddings(args.embeddings, Branch::vehicle));
    const auto dataset = vocreid::Dataset::validate(
        std::move(branches), vocreid::read_metadata(args.meta));
    const auto batch =
        vocreid::sample_batch(dataset, args.classes, args.instances, args.seed);
    const double circle = vocreid::circle_loss(batch, args.config);
    const double triplet =
        vocreid::triplet_loss_batch_hard(batch, args.config.triplet_margin);
    nlohmann::ordered_json out{
        {"p", args.classes},        {"k", args.instances},
        {"seed", args.seed},        {"circle", circle},
        {"triplet", triplet},       {"combined", circle + triplet},
    };
    std::printf("%s\n", out.dump().c_str());
}

// =============================================================================
// pipeline
// =============================================================================

struct PipelineArgs {
    std::string vehicle, orientation, camera, meta, out_dir, config_path;
    std::string track_spec;       // value of --track-agg (empty = all branches)
    bool track_flag = false;      // --track-agg seen
    std::string track_order = "before-rerank";
    std::string hard_camera = "off";
    bool rerank = false;
    vocreid::PipelineOptions options;
};

void apply_config_file(PipelineArgs& args, const CLI::App* cmd) {
    const std::string text = vocreid::read_file(args.config_path);
    nlohmann::json config;
    try {
        config = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::Format,
                    args.config_path + ": " + e.what());
    }
    // flags explicitly passed on the command line win over the config file
    auto overridden = [&](const std::string& flag) {
        return cmd->count(flag) > 0;
    };
    try {
        if (config.contains("lambda_o") && !overridden("--lambda-o"))
            args.options.weights.lambda_o = config["lambda_o"].get<double>();
        if (config.contains("lambda_c") && !overridden("--lambda-c"))
            args.options.weights.lambda_c = config["lambda_c"].get<double>();
        if (config.contains("k1") && !overridden("--k1"))
            args.options.rerank_config.k1 = config["k1"].get<int>();
        if (config.contains("k2") && !overridden("--k2"))
            args.options.rerank_config.k2 = config["k2"].get<int>();
        if (config.contains("lambda_rr") && !overridden("--lambda-rr"))
            args.options.rerank_config.lambda_rr =
                config["lambda_rr"].get<double>();
        if (config.contains("rerank") && !overridden("--rerank"))
            args.rerank = config["rerank"].get<bool>();
        if (config.contains("topk") && !overridden("--topk"))
            args.options.topk = config["topk"].get<std::size_t>();
        if (config.contains("hard_camera") && !overridden("--hard-camera"))
            args.hard_camera = config["hard_camera"].get<std::string>();
        if (config.contains("track_agg") && !overridden("--track-agg")) {
            args.track_flag = true;
            args.track_spec = config["track_agg"].get<std::string>();
        }
        if (config.contains("track_order") && !overridden("--track-order"))
            args.track_order = config["track_order"].get<std::string>();
        if (config.contains("threads") && !overridden("--threads"))
            args.options.threads = config["threads"].get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::Format,
                    args.config_path + ": " + e.what());
    }
}

void run_pipeline_cmd(PipelineArgs& args, const CLI::App* cmd) {
    if (!args.config_path.empty()) apply_config_file(args, cmd);

    args.options.rerank = args.rerank;
    args.options.hard_camera = parse_hard_camera(args.hard_camera);
    if (args.track_flag)
        args.options.track_branches = parse_branch_list(args.track_spec);
    if (args.track_order == "after-rerank")
        args.options.track_after_rerank = true;
    else if (args.track_order != "before-rerank")
        throw Error(ErrorCategory::Config,
                    "--track-order must be before-rerank or after-rerank");

    const auto dataset =
        load_dataset(args.vehicle, args.orientation, args.camera, args.meta);

    const auto rows = vocreid::standard_sweep(dataset, args.options.rerank,
                                              !args.options.track_branches.empty());
    const auto reports = vocreid::ablation_run(dataset, rows, args.options);

    ensure_dir(args.out_dir);
    const std::string table = vocreid::ablation_table(rows, reports);
    vocreid::write_file_synced(args.out_dir + "/report.jsonl",
                               vocreid::report_jsonl(rows, reports, args.options));
    vocreid::write_file_synced(args.out_dir + "/ablation.txt", table);
    std::fputs(table.c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VOC-ReID retrieval engine"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
    synth_cmd->add_option("--ids", synth.config.n_ids, "number of identities");
    synth_cmd->add_option("--images-per-id", synth.config.images_per_id,
                          "images per identity (first becomes the query)");
    synth_cmd->add_option("--cameras", synth.config.n_cameras, "camera count");
    synth_cmd->add_option("--orient-bins", synth.config.n_orient_bins,
                          "orientation bins (1..36)");
    synth_cmd->add_option("--dim-vehicle", synth.config.dim_vehicle);
    synth_cmd->add_option("--dim-orientation", synth.config.dim_orientation);
    synth_cmd->add_option("--dim-camera", synth.config.dim_camera);
    synth_cmd->add_option("--alpha-id", synth.config.id_strength);
    synth_cmd->add_option("--alpha-orient", synth.config.orient_strength);
    synth_cmd->add_option("--alpha-camera", synth.config.cam_strength);
    synth_cmd->add_option("--noise-sigma", synth.config.noise_sigma);
    synth_cmd->add_option("--seed", synth.config.seed);

    DistArgs dist;
    auto* dist_cmd =
        app.add_subcommand("dist", "one branch's cosine similarity block");
    dist_cmd->add_option("--embeddings", dist.embeddings)->required();
    dist_cmd->add_option("--meta", dist.meta)->required();
    dist_cmd->add_option("--out", dist.out)->required();
    dist_cmd->add_option("--block", dist.block, "qg, qq, or gg");
    dist_cmd->add_flag("--track-agg", dist.track_agg,
                       "average gallery features per track first");
    dist_cmd->add_option("--threads", dist.threads);

    FuseArgs fuse;
    auto* fuse_cmd = app.add_subcommand("fuse", "penalty fusion of branch blocks");
    fuse_cmd->add_option("--vehicle", fuse.vehicle)->required();
    fuse_cmd->add_option("--orientation", fuse.orientation);
    fuse_cmd->add_option("--camera", fuse.camera);
    fuse_cmd->add_option("--out", fuse.out)->required();
    fuse_cmd->add_option("--lambda-o", fuse.weights.lambda_o);
    fuse_cmd->add_option("--lambda-c", fuse.weights.lambda_c);

    RerankArgs rerank;
    auto* rerank_cmd =
        app.add_subcommand("rerank", "k-reciprocal re-ranking of a fused block");
    rerank_cmd->add_option("--fused", rerank.fused)->required();
    rerank_cmd->add_option("--query-self", rerank.query_self)->required();
    rerank_cmd->add_option("--gallery-self", rerank.gallery_self)->required();
    rerank_cmd->add_option("--out", rerank.out)->required();
    rerank_cmd->add_option("--k1", rerank.config.k1);
    rerank_cmd->add_option("--k2", rerank.config.k2);
    rerank_cmd->add_option("--lambda-rr", rerank.config.lambda_rr);
    rerank_cmd->add_option("--threads", rerank.config.threads);

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "mAP / CMC report");
    eval_cmd->add_option("--scores", eval.scores)->required();
    eval_cmd->add_option("--meta", eval.meta)->required();
    eval_cmd->add_option("--out-report", eval.out_report);
    eval_cmd->add_option("--kind", eval.kind, "similarity or distance");
    eval_cmd->add_option("--topk", eval.topk, "truncate mAP at this rank");
    eval_cmd->add_option("--threads", eval.threads);

    LossArgs loss;
    auto* loss_cmd =
        app.add_subcommand("loss", "loss forward values on a sampled batch");
    loss_cmd->add_option("--embeddings", loss.embeddings)->required();
    loss_cmd->add_option("--meta", loss.meta)->required();
    loss_cmd->add_option("--p", loss.classes, "classes per batch");
    loss_cmd->add_option("--k", loss.instances, "instances per class");
    loss_cmd->add_option("--seed", loss.seed);
    loss_cmd->add_option("--circle-scale", loss.config.circle_scale);
    loss_cmd->add_option("--circle-margin", loss.config.circle_margin);
    loss_cmd->add_option("--triplet-margin", loss.config.triplet_margin);

    PipelineArgs pipe;
    auto* pipe_cmd = app.add_subcommand("pipeline", "full retrieval run");
    pipe_cmd->add_option("--vehicle", pipe.vehicle)->required();
    pipe_cmd->add_option("--orientation", pipe.orientation);
    pipe_cmd->add_option("--camera", pipe.camera);
    pipe_cmd->add_option("--meta", pipe.meta)->required();
    pipe_cmd->add_option("--out-dir", pipe.out_dir)->required();
    pipe_cmd->add_option("--config", pipe.config_path,
                         "JSON config file; explicit flags win");
    pipe_cmd->add_option("--lambda-o", pipe.options.weights.lambda_o);
    pipe_cmd->add_option("--lambda-c", pipe.options.weights.lambda_c);
    pipe_cmd->add_option("--k1", pipe.options.rerank_config.k1);
    pipe_cmd->add_option("--k2", pipe.options.rerank_config.k2);
    pipe_cmd->add_option("--lambda-rr", pipe.options.rerank_config.lambda_rr);
    pipe_cmd->add_flag("--rerank", pipe.rerank, "apply k-reciprocal re-ranking");
    pipe_cmd->add_option("--track-agg", pipe.track_spec,
                         "branches to track-average (bare flag = all)")
        ->expected(0, 1);
    pipe_cmd->add_option("--track-order", pipe.track_order,
                         "before-rerank or after-rerank");
    pipe_cmd->add_option("--hard-camera", pipe.hard_camera,
                         "off, exclude, or eq5");
    pipe_cmd->add_option("--topk", pipe.options.topk);
    pipe_cmd->add_option("--threads", pipe.options.threads);

    try {
        app.parse(argc, argv);
        if (synth_cmd->parsed()) run_synth(synth);
        if (dist_cmd->parsed()) run_dist(dist);
        if (fuse_cmd->parsed()) run_fuse(fuse);
        if (rerank_cmd->parsed()) run_rerank(rerank);
        if (eval_cmd->parsed()) run_eval(eval);
        if (loss_cmd->parsed()) run_loss(loss);
        if (pipe_cmd->parsed()) {
            pipe.track_flag = pipe_cmd->count("--track-agg") > 0;
            run_pipeline_cmd(pipe, pipe_cmd);
        }
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", to_string(e.category()),
                     e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
}
