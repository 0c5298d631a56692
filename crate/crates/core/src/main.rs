fn main() {
    println!("radqc");
}
