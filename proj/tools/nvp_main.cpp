#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nvp/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"real NVP density estimation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", checkpoint;
    uint64_t seed = 0;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"train", "train a flow model (resumes when --checkpoint is given)"},
        {"eval", "print validation bits/dim for a checkpoint"},
        {"sample", "draw exact samples and write an image grid (or CSV for 2-d models)"},
        {"interpolate", "decode the two-angle latent manifold spanned by four inputs"},
        {"compress", "reconstruct inputs from coarse-scale latents, resampling the rest"},
        {"extrapolate", "sample at a scaled spatial size"},
        {"attr-transfer", "re-decode images under permuted attribute vectors"},
    };
    std::vector<CLI::App*> subs;
    for (const auto& [name, desc] : commands) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "flat key=value config file");
        sub->add_option("--out", out_dir, "output directory (default: out)");
        sub->add_option("--checkpoint", checkpoint, "checkpoint path");
        sub->add_option("--seed", seed, "seed override");
        sub->allow_extras();  // trailing key=value overrides
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    nvp::RunConfig rc;
    rc.subcommand = sub->get_name();
    rc.config_path = config_path;
    rc.out_dir = out_dir;
    rc.checkpoint = checkpoint;
    if (sub->count("--seed") > 0) rc.seed = seed;
    rc.overrides = sub->remaining();
    return nvp::run_command(rc);
}
