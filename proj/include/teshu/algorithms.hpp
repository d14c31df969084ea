#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "teshu/schedules.hpp"
#include "teshu/template.hpp"

namespace teshu::algorithms {

// Shipped template bodies. The files under templates/ carry the same text.

inline constexpr std::string_view kVanillaPush = R"(# Sources partition and push to every destination.
template vanilla_push
mode push
scope roles
sender:
  PART parts bufs dsts
  FOR d IN dsts
    SEND d parts[d]
  END
receiver:
  FOR n IN srcs
    RECV recv[n] n
  END
  COMB out recv
)";

inline constexpr std::string_view kVanillaPull = R"(# Sources publish partitions; destinations fetch them.
template vanilla_pull
mode pull
scope roles
sender:
  PART parts bufs dsts
  PUBLISH parts
receiver:
  FOR n IN srcs
    FETCH recv[n] n
  END
  COMB out recv
)";

inline constexpr std::string_view kCoordinated = R"(# Pull in rotating-ring order so no two receivers hit one sender at the same step.
template coordinated
mode pull
scope roles
param RING_ORDER
sender:
  PART parts bufs dsts
  PUBLISH parts
receiver:
  FOR n IN $RING_ORDER
    FETCH recv[n] n
  END
  COMB out recv
)";

inline constexpr std::string_view kBruck = R"(# log2(n) rounds; round k forwards every block whose relative destination has bit k set.
template bruck
mode push
scope all
param BRUCK_ROUNDS
sender:
  LET blocks = COPY bufs
  FOR r IN $BRUCK_ROUNDS
    PART parts blocks dsts
    LET outgoing = SELECT parts r.sel
    LET blocks = EXCLUDE parts r.sel
    SEND r.to outgoing
    RECV incoming r.from
    LET blocks = CONCAT blocks incoming
  END
receiver:
  COMB out blocks
)";

inline constexpr std::string_view kTwoLevel = R"(# Exchange inside sender groups, merge, then one buffer per destination per group.
template two_level
mode push
scope roles
param GROUP_SLICES
param MY_SLICE
param FORWARDERS
sender:
  PART parts bufs dsts
  FOR m IN $GROUP_SLICES
    LET piece = SELECT parts m.sel
    SEND m.to piece
  END
  LET gathered = EMPTY
  FOR m IN $GROUP_SLICES
    RECV got m.from
    LET gathered = CONCAT gathered got
  END
  COMB merged gathered
  PART fwd merged dsts
  FOR d IN $MY_SLICE
    SEND d fwd[d]
  END
receiver:
  FOR n IN $FORWARDERS
    RECV recv[n] n
  END
  COMB out recv
)";

inline constexpr std::string_view kNetworkAware = R"(# Hierarchical shuffle: server and rack combines run only when sampling says they pay off.
template network_aware
mode push
scope roles
requires combFunc
param RATE
sender:
  COMB bufs bufs
  FIND_NBR sNbrs SERVER srcs
  SAMP sSamp bufs $RATE sNbrs
  EFF_COST sEff sCost sSamp SERVER
  IF sEff > sCost DECIDE S
    PART sPart bufs sNbrs
    FOR n IN sNbrs
      SEND n sPart[n]
      RECV sPart[n] n
    END
    COMB bufs sPart
  END
  FIND_NBR rNbrs RACK srcs
  SAMP rSamp bufs $RATE rNbrs
  EFF_COST rEff rCost rSamp RACK
  IF rEff > rCost DECIDE R
    PART rPart bufs rNbrs
    FOR n IN rNbrs
      SEND n rPart[n]
      RECV rPart[n] n
    END
    COMB bufs rPart
  END
  PART parts bufs dsts
  FOR d IN dsts
    SEND d parts[d]
  END
receiver:
  FOR n IN srcs
    RECV recv[n] n
  END
  COMB out recv
)";

inline Template vanilla_push() { return parse_template(kVanillaPush); }
inline Template vanilla_pull() { return parse_template(kVanillaPull); }
inline Template coordinated() { return parse_template(kCoordinated); }
inline Template bruck() { return parse_template(kBruck); }
/// Group size is an instantiation option (PlanOptions::group_size); unset means ceil(sqrt(n)).
inline Template two_level_exchange() { return parse_template(kTwoLevel); }
inline Template network_aware() { return parse_template(kNetworkAware); }

/// id -> template text for every shipped algorithm.
inline std::map<std::string, std::string> builtin_sources() {
  return {{"vanilla_push", std::string(kVanillaPush)}, {"vanilla_pull", std::string(kVanillaPull)},
          {"coordinated", std::string(kCoordinated)},   {"bruck", std::string(kBruck)},
          {"two_level", std::string(kTwoLevel)},        {"network_aware", std::string(kNetworkAware)}};
}

/// Reads every `*.tmpl` file in `dir`, keyed by the template id it declares.
inline std::map<std::string, std::string> load_directory(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".tmpl") continue;
    std::ifstream in(entry.path());
    std::stringstream ss;
    ss << in.rdbuf();
    std::string body = ss.str();
    out[parse_template(body).id] = std::move(body);
  }
  return out;
}

}  // namespace teshu::algorithms
