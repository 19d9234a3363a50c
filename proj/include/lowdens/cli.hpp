#pragma once

namespace lowdens {

// Exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitInput = 2,
  kExitNumerical = 3,
  kExitAlarm = 4,
};

int run_cli(int argc, char** argv);

}  // namespace lowdens
