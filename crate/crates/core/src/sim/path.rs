//! The simulated read path: a fixed call tree over the shipped layers.

/// Layer names in description order; truth vectors are indexed by this.
pub const LAYERS: [&str; 8] = ["vfs", "mm", "fs", "blk", "req", "drv", "cpy", "io"];

const VFS: usize = 0;
const MM: usize = 1;
const FS: usize = 2;
const BLK: usize = 3;
const REQ: usize = 4;
const DRV: usize = 5;
const CPY: usize = 6;
const IO: usize = 7;

pub const SYSCALL_NAME: &str = "sys_read";
pub const IRQ_HANDLER_NAME: &str = "irq_handler";
pub const SCHED_NAME: &str = "sched_switch";
pub const SUBMIT_NAME: &str = "block_rq_issue";
pub const COMPLETE_NAME: &str = "block_rq_complete";

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Role {
    Plain,
    /// Issues the device command halfway through its self time.
    Submit,
    /// Sleeps until the device completes, halfway through its self time.
    Sleep,
}

struct Node {
    func: &'static str,
    layer: usize,
    miss_only: bool,
    role: Role,
    children: &'static [Node],
}

const fn node(func: &'static str, layer: usize, children: &'static [Node]) -> Node {
    Node { func, layer, miss_only: false, role: Role::Plain, children }
}

const DRIVER: Node = node(
    "submit_bio",
    BLK,
    &[node(
        "blk_mq_submit_bio",
        REQ,
        &[node(
            "blk_mq_run_hw_queue",
            REQ,
            &[node(
                "blk_mq_dispatch_rq_list",
                REQ,
                &[node(
                    "scsi_queue_rq",
                    DRV,
                    &[node(
                        "ata_scsi_queuecmd",
                        DRV,
                        &[Node { func: "ahci_qc_issue", layer: DRV, miss_only: false, role: Role::Submit, children: &[] }],
                    )],
                )],
            )],
        )],
    )],
);

const ROOT: Node = node(
    "ksys_read",
    VFS,
    &[node(
        "vfs_read",
        VFS,
        &[node(
            "ext4_file_read_iter",
            FS,
            &[node(
                "filemap_read",
                MM,
                &[
                    node(
                        "filemap_get_pages",
                        MM,
                        &[
                            Node { func: "ext4_mpage_readpages", layer: FS, miss_only: true, role: Role::Plain, children: &[DRIVER] },
                            Node { func: "io_schedule", layer: IO, miss_only: true, role: Role::Sleep, children: &[] },
                        ],
                    ),
                    node("copy_page_to_iter", CPY, &[]),
                ],
            )],
        )],
    )],
);

/// One step of a request's kernel-side timeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Enter(&'static str),
    Exit(&'static str),
    /// On-cpu self time of the current function.
    Work { ns: u64, layer: usize },
    Submit,
    Sleep,
}

/// Every function the simulator can call, in depth-first order.
pub fn all_functions() -> Vec<&'static str> {
    fn walk(n: &Node, out: &mut Vec<&'static str>) {
        out.push(n.func);
        for c in n.children {
            walk(c, out);
        }
    }
    let mut out = Vec::new();
    walk(&ROOT, &mut out);
    out
}

/// Layers touched by a request, with the number of functions per layer.
pub fn functions_per_layer(miss: bool) -> [u64; LAYERS.len()] {
    fn walk(n: &Node, miss: bool, out: &mut [u64; LAYERS.len()]) {
        if n.miss_only && !miss {
            return;
        }
        out[n.layer] += 1;
        for c in n.children {
            walk(c, miss, out);
        }
    }
    let mut out = [0; LAYERS.len()];
    walk(&ROOT, miss, &mut out);
    out
}

/// Expands a request into steps. `layer_ns` is each layer's self time;
/// a layer's time is split evenly across its functions on the path (the
/// first gets the remainder), and each function's time is split into a
/// half before its children and a half after.
pub fn expand(miss: bool, layer_ns: &[u64; LAYERS.len()]) -> Vec<Step> {
    struct Ctx<'a> {
        miss: bool,
        layer_ns: &'a [u64; LAYERS.len()],
        counts: [u64; LAYERS.len()],
        seen: [u64; LAYERS.len()],
        out: Vec<Step>,
    }
    fn walk(n: &Node, cx: &mut Ctx) {
        if n.miss_only && !cx.miss {
            return;
        }
        let (total, count) = (cx.layer_ns[n.layer], cx.counts[n.layer]);
        let mut own = total / count;
        if cx.seen[n.layer] == 0 {
            own += total % count;
        }
        cx.seen[n.layer] += 1;
        let pre = own / 2;
        cx.out.push(Step::Enter(n.func));
        cx.out.push(Step::Work { ns: pre, layer: n.layer });
        for c in n.children {
            walk(c, cx);
        }
        match n.role {
            Role::Plain => {}
            Role::Submit => cx.out.push(Step::Submit),
            Role::Sleep => cx.out.push(Step::Sleep),
        }
        cx.out.push(Step::Work { ns: own - pre, layer: n.layer });
        cx.out.push(Step::Exit(n.func));
    }
    let mut cx = Ctx { miss, layer_ns, counts: functions_per_layer(miss), seen: [0; LAYERS.len()], out: Vec::with_capacity(64) };
    walk(&ROOT, &mut cx);
    cx.out
}
