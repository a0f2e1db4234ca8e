#pragma once

#include <iosfwd>
#include <string>

#include "disents_cli/run_config.hpp"

namespace disents::cli {

int cmd_synth(const RunConfig& c, std::ostream& out);
int cmd_train(const RunConfig& c, std::ostream& out);
int cmd_eval(const RunConfig& c, std::ostream& out);
int cmd_inspect(const RunConfig& c, const std::string& what, std::ostream& out);
int cmd_baseline(const RunConfig& c, std::ostream& out);

/// Checks that the files a command reads exist, before any work starts.
void preflight(const RunConfig& c, bool needs_data, bool needs_checkpoint);

}  // namespace disents::cli
