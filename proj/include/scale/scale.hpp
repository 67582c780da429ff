#pragma once

#include "scale/augspec.hpp"
#include "scale/data.hpp"
#include "scale/eval.hpp"
#include "scale/family.hpp"
#include "scale/gradest.hpp"
#include "scale/net.hpp"
#include "scale/optim.hpp"
#include "scale/pacreg.hpp"
#include "scale/parallel.hpp"
#include "scale/rng.hpp"
#include "scale/tensor.hpp"
#include "scale/trainer.hpp"
#include "scale/transform.hpp"
#include "scale/verify.hpp"
#include "scale/warp.hpp"
