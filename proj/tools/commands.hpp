#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "aplab/io.hpp"

namespace aplab::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kConfigError = 2, kIoError = 3 };

struct CommandContext {
    /// Parsed --config file, or an empty object.
    io::Json config = io::Json::object();
    std::filesystem::path out = "out";
    /// --seed; overrides the config's "seed" key.
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
    std::ostream* log = nullptr;
};

int cmd_gradcheck(const CommandContext& ctx);
int cmd_train(const CommandContext& ctx);
int cmd_layer_sweep(const CommandContext& ctx);
int cmd_theory(const CommandContext& ctx);
int cmd_equiv(const CommandContext& ctx);
int cmd_cka(const CommandContext& ctx);
int cmd_attn_dist(const CommandContext& ctx);

/// Full command line: parses flags, loads the config, dispatches, and maps
/// errors to exit codes with a message on `err`.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace aplab::cli
