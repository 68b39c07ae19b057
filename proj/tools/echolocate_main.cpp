#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "echolocate/eval.hpp"
#include "echolocate/trainer.hpp"
#include "echolocate/wav.hpp"

namespace fs = std::filesystem;
using namespace echolocate;

namespace {

Vec3 parse_vec3(const std::string& s) {
    Vec3 v;
    char c1 = 0, c2 = 0;
    std::istringstream in(s);
    if (!(in >> v.x >> c1 >> v.y >> c2 >> v.z) || c1 != ',' || c2 != ',')
        throw CLI::ValidationError("expected \"x,y,z\", got \"" + s + "\"");
    return v;
}

RunManifest load_manifest(const std::string& path) {
    RunManifest man = path.empty() ? RunManifest{} : parse_manifest(path);
    man.resolve_and_validate();
    return man;
}

EvalContext make_context(const RunManifest& man, SignalBank& bank) {
    for (int j = 0; j < man.env.n_sources; ++j) bank.get(j);
    return EvalContext{man.env, man.acoustics, man.features, &bank};
}

// Checkpoint params must fit the manifest's environment.
void check_arch(const Checkpoint& ckpt, const RunManifest& man) {
    if (ckpt.arch.n_actions != man.env.n_actions() ||
        ckpt.arch.in_channels != man.env.mics.channels())
        throw std::runtime_error(
            "checkpoint architecture does not match the manifest environment");
}

int cmd_train(const std::string& manifest_path, int64_t seed, bool seed_set,
              const std::string& out, int threads, const std::string& resume) {
    RunManifest man = load_manifest(manifest_path);
    if (seed_set) man.train.seed = uint64_t(seed);
    if (!out.empty()) man.output_dir = out;
    TrainResult res = train(man, threads, resume);

    SignalBank bank(man.env.f_s);
    EvalContext ctx = make_context(man, bank);
    MetricsReport rep =
        evaluate(ctx, res.final_checkpoint.online, res.final_checkpoint.arch, man.eval, threads);
    write_metrics_json((fs::path(res.run_dir) / "metrics.json").string(), rep);
    std::cout << "run_dir: " << res.run_dir << "\n"
              << "epochs: " << man.train.epochs << "\n"
              << "accuracy: " << rep.accuracy << "\n"
              << "reachability: " << rep.reachability << "\n"
              << "avg_total_reward: " << rep.avg_total_reward << "\n";
    return 0;
}

int cmd_eval(const std::string& manifest_path, int64_t seed, bool seed_set,
             const std::string& out, int threads, const std::string& ckpt_path, int trials) {
    RunManifest man = load_manifest(manifest_path);
    if (seed_set) man.eval.seed = uint64_t(seed);
    if (trials > 0) man.eval.n_trials = trials;
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    check_arch(ckpt, man);

    SignalBank bank(man.env.f_s);
    EvalContext ctx = make_context(man, bank);
    MetricsReport rep = evaluate(ctx, ckpt.online, ckpt.arch, man.eval, threads);
    std::cout << "n_trials: " << rep.n_trials << "\n"
              << "accuracy: " << rep.accuracy << "\n"
              << "reachability: " << rep.reachability << "\n"
              << "avg_total_reward: " << rep.avg_total_reward << "\n";
    if (!out.empty()) {
        fs::create_directories(fs::path(out));
        write_metrics_json((fs::path(out) / "metrics.json").string(), rep);
    }
    return 0;
}

int cmd_render_rir(const std::string& manifest_path, const std::string& out,
                   const std::string& source_s, const std::string& mic_s, int max_order,
                   bool normalize) {
    RunManifest man = load_manifest(manifest_path);
    Vec3 src = source_s.empty() ? Vec3{man.env.room.dims.x * 0.75, man.env.room.dims.y * 0.25,
                                       man.env.source_height}
                                : parse_vec3(source_s);
    Vec3 mic = mic_s.empty()
                   ? Vec3{man.env.room.dims.x * 0.25, man.env.room.dims.y * 0.75,
                          man.env.agent_height}
                   : parse_vec3(mic_s);
    AcousticParams params = man.acoustics;
    if (max_order >= 0) params.max_order = max_order;

    auto images = enumerate_image_sources(man.env.room, src, params.max_order);
    ImpulseResponse rir = render_rir(images, mic, params);
    if (normalize) {
        float peak = 0;
        for (float v : rir) peak = std::max(peak, std::abs(v));
        if (peak > 0)
            for (float& v : rir) v *= 0.9f / peak;
    }
    AudioClip clip;
    clip.channels = 1;
    clip.sample_rate = int(params.f_s);
    clip.samples = rir;
    std::string path = out.empty() ? "rir.wav" : out;
    write_wav(path, clip);
    std::cout << "wrote " << path << " (" << rir.size() << " samples, "
              << images.size() << " images)\n";
    return 0;
}

int cmd_render_field(const std::string& manifest_path, const std::string& out, int threads,
                     const std::string& ckpt_path, double grid_step, const std::string& source_s,
                     const std::string& start_s, int max_steps) {
    RunManifest man = load_manifest(manifest_path);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    check_arch(ckpt, man);

    const RoomSpec& room = man.env.room;
    SourceSpec source;
    source.position = source_s.empty() ? Vec3{room.dims.x * 0.75, room.dims.y * 0.25,
                                              man.env.source_height}
                                       : parse_vec3(source_s);
    Vec3 start = start_s.empty()
                     ? Vec3{room.dims.x * 0.25, room.dims.y * 0.75, man.env.agent_height}
                     : parse_vec3(start_s);
    if (max_steps <= 0) max_steps = man.eval.max_steps;

    SignalBank bank(man.env.f_s);
    EvalContext ctx = make_context(man, bank);
    PolicyFn policy = make_qnet_policy(ckpt.online, ckpt.arch);
    PolicyField field = policy_field(ctx, policy, grid_step, source, start, max_steps, threads);

    fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
    fs::create_directories(dir);
    write_field_csv((dir / "field.csv").string(), field);
    write_trajectory_json((dir / "trajectory.json").string(), field);
    std::cout << "wrote " << (dir / "field.csv").string() << " (" << field.nx << "x" << field.ny
              << " cells) and " << (dir / "trajectory.json").string() << " ("
              << field.trajectory_actions.size() << " steps)\n";
    return 0;
}

int cmd_replay_inspect(const std::string& manifest_path, const std::string& ckpt_path,
                       const std::string& out) {
    RunManifest man = load_manifest(manifest_path);
    Checkpoint ckpt = load_checkpoint(ckpt_path);

    // Replay geometry only (no audio) to recover rewards and success flags.
    nlohmann::json eps = nlohmann::json::array();
    size_t transitions = 0;
    int successes = 0;
    for (const auto& tr : ckpt.buffer) {
        EnvState st;
        st.agent.centre = tr.agent_start;
        st.sources = tr.sources;
        double total = 0;
        bool success = false;
        for (int a : tr.actions) {
            GeomOutcome geo = apply_action(st, ActionId(a), man.env);
            total += geo.reward;
            if (geo.event == StepEvent::FoundNewSource) success = true;
        }
        transitions += tr.actions.size();
        successes += success ? 1 : 0;
        eps.push_back({{"id", tr.id},
                       {"n_transitions", tr.actions.size()},
                       {"total_reward", total},
                       {"success", success},
                       {"agent_start", {tr.agent_start.x, tr.agent_start.y, tr.agent_start.z}}});
    }
    nlohmann::json j{{"epoch", ckpt.epoch},
                     {"global_update", ckpt.global_update},
                     {"epsilon", ckpt.epsilon},
                     {"n_episodes", ckpt.buffer.size()},
                     {"n_transitions", transitions},
                     {"n_successful_episodes", successes},
                     {"episodes", std::move(eps)}};
    if (out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open for writing: " + out);
        f << j.dump(2) << "\n";
        std::cout << "wrote " << out << " (" << ckpt.buffer.size() << " episodes)\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"audio-guided navigation agent: training, evaluation, rendering"};
    app.require_subcommand(1);

    std::string manifest_path, out, checkpoint, resume;
    std::string source_s, mic_s, start_s;
    int64_t seed = 0;
    int threads = 1, trials = 0, max_order = -1, max_steps = 0;
    double grid_step = 0.5;
    bool no_normalize = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--manifest", manifest_path, "run manifest (empty = defaults)");
        sub->add_option("--seed", seed, "seed override");
        sub->add_option("--out", out, "output path override");
        sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
        return sub;
    };

    auto* c_train = add_common(app.add_subcommand("train", "train a Q-network"));
    c_train->add_option("--resume", resume, "checkpoint to resume from");

    auto* c_eval = add_common(app.add_subcommand("eval", "evaluate a checkpoint"));
    c_eval->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    c_eval->add_option("--trials", trials, "trial count override")->check(CLI::PositiveNumber);

    auto* c_rir = add_common(app.add_subcommand("render-rir", "write an impulse response WAV"));
    c_rir->add_option("--source", source_s, "source position \"x,y,z\"");
    c_rir->add_option("--mic", mic_s, "microphone position \"x,y,z\"");
    c_rir->add_option("--max-order", max_order, "reflection order override");
    c_rir->add_flag("--no-normalize", no_normalize, "keep raw amplitudes");

    auto* c_field = add_common(app.add_subcommand("render-field", "export the greedy policy field"));
    c_field->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    c_field->add_option("--grid-step", grid_step, "cell size in meters")->check(CLI::PositiveNumber);
    c_field->add_option("--source", source_s, "source position \"x,y,z\"");
    c_field->add_option("--start", start_s, "trajectory start \"x,y,z\"");
    c_field->add_option("--max-steps", max_steps, "trajectory budget");

    auto* c_replay = add_common(app.add_subcommand("replay-inspect", "summarize a stored buffer"));
    c_replay->add_option("--checkpoint", checkpoint, "checkpoint with a buffer")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);  // prints synopsis on usage errors
    }

    try {
        bool seed_set = app.get_subcommands().at(0)->count("--seed") > 0;
        if (c_train->parsed())
            return cmd_train(manifest_path, seed, seed_set, out, threads, resume);
        if (c_eval->parsed())
            return cmd_eval(manifest_path, seed, seed_set, out, threads, checkpoint, trials);
        if (c_rir->parsed())
            return cmd_render_rir(manifest_path, out, source_s, mic_s, max_order, !no_normalize);
        if (c_field->parsed())
            return cmd_render_field(manifest_path, out, threads, checkpoint, grid_step, source_s,
                                    start_s, max_steps);
        if (c_replay->parsed()) return cmd_replay_inspect(manifest_path, checkpoint, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
